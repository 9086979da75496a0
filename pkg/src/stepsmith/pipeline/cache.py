"""Content-addressed feature cache.

Each WAV's log-mel features live in `<sha256 of the wav bytes>.npz`
inside the cache directory, so a changed file never hits a stale entry
and re-featurizing an unchanged corpus is pure cache hits. The entry
embeds its own digest and a feature-format tag; a file whose embedded
digest disagrees with its name is corrupt and refused, while an old
format tag just forces recomputation.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from stepsmith.audiofeat import MelSpectrogram, load_wav, mel_features
from stepsmith.errors import AudioError, DataError

FEATURE_TAG = "logmel-80x3-hop441"


@dataclass(frozen=True)
class CachedFeatures:
    spec: MelSpectrogram
    duration_s: float
    digest: str


def wav_digest(wav_bytes: bytes) -> str:
    return hashlib.sha256(wav_bytes).hexdigest()


def cache_path(cache_dir, digest: str) -> Path:
    return Path(cache_dir) / f"{digest}.npz"


def load_entry(path) -> CachedFeatures:
    path = Path(path)
    try:
        with np.load(path) as z:
            entry = CachedFeatures(
                spec=MelSpectrogram(
                    np.asarray(z["data"], dtype=np.float32),
                    np.asarray(z["band_centers"], dtype=np.float64),
                    float(z["hop_s"]),
                ),
                duration_s=float(z["duration_s"]),
                digest=str(z["digest"]),
            )
            tag = str(z["tag"])
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"unreadable feature cache entry {path}: {exc}") from None
    if entry.digest != path.stem:
        raise DataError(
            f"feature cache hash mismatch: {path.name} stores digest {entry.digest}"
        )
    if tag != FEATURE_TAG:
        raise DataError(f"feature cache entry {path} uses format {tag!r}")
    return entry


def featurize_wav(wav_path, cache_dir) -> Path:
    """Compute (or reuse) the cached features for one WAV; returns the entry path."""
    wav_path = Path(wav_path)
    try:
        wav_bytes = wav_path.read_bytes()
    except OSError as exc:
        raise AudioError(f"cannot read audio file {wav_path}: {exc}") from None
    digest = wav_digest(wav_bytes)
    out = cache_path(cache_dir, digest)
    if out.exists():
        try:
            load_entry(out)
            return out
        except DataError:
            pass  # stale or damaged: fall through and recompute
    clip = load_wav(wav_path)
    spec = mel_features(clip)
    out.parent.mkdir(parents=True, exist_ok=True)
    np.savez(
        out,
        data=spec.data,
        band_centers=spec.band_centers,
        hop_s=spec.hop_s,
        duration_s=clip.samples.shape[0] / clip.sample_rate,
        digest=digest,
        tag=FEATURE_TAG,
    )
    return out


def featurize_many(wav_paths, cache_dir, workers: int = 1) -> list:
    """Featurize a batch of WAVs, optionally fanning out across processes."""
    paths = list(wav_paths)
    if workers <= 1 or len(paths) <= 1:
        return [featurize_wav(p, cache_dir) for p in paths]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(featurize_wav, paths, [cache_dir] * len(paths)))
