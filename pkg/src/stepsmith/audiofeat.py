"""PCM audio to normalized 3-channel log-mel features.

The representation is built for onset work rather than speech: three
STFT channels with Hann windows of 1024, 2048, and 4096 samples (about
23, 46, and 93 ms at 44.1 kHz) share a common 10 ms hop and a common
4096-point bin axis, so a single frame index addresses the same instant
at three time/frequency trade-offs. Short windows keep attack
transients crisp; the long window resolves pitch. Each channel is
projected onto 80 triangular mel filters spanning 27.5 Hz to 16 kHz
(HTK mel scale, unit peak triangles) and floored log scaled via
log(x + 1e-16).

Frames are center aligned: frame t covers the samples around t*441,
with zero padding beyond the signal edges, and a clip of n samples
yields n//441 + 1 frames. All arithmetic is float64 and the pipeline
is fully deterministic: the same input bytes give bit-identical
features.

Normalization statistics are a separate, explicit object rather than a
hidden preprocessing step because generation must reuse the exact
stats fitted on the training split; they travel with the model
checkpoint.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from stepsmith.errors import AudioError

SAMPLE_RATE = 44100
HOP = 441
HOP_S = HOP / SAMPLE_RATE
WINDOW_SIZES = (1024, 2048, 4096)
FFT_SIZE = 4096
NUM_BINS = FFT_SIZE // 2 + 1
NUM_CHANNELS = len(WINDOW_SIZES)
NUM_BANDS = 80
MEL_FMIN = 27.5
MEL_FMAX = 16000.0
LOG_FLOOR = 1e-16
STD_FLOOR = 1e-6

_CHUNK_FRAMES = 1024


@dataclass(eq=False)
class AudioClip:
    """Mono samples in [-1, 1] at a known rate."""

    samples: np.ndarray
    sample_rate: int

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(eq=False)
class MelSpectrogram:
    """(frames, 80, 3) log-mel array plus its band geometry."""

    data: np.ndarray
    band_centers: np.ndarray
    hop_s: float = HOP_S


@dataclass(eq=False)
class NormalizationStats:
    """Per (band, channel) mean and std, std floored away from zero."""

    mean: np.ndarray
    std: np.ndarray


def load_wav(path) -> AudioClip:
    """Read a PCM WAV file as a mono 44.1 kHz clip.

    16-bit integer and 32-bit float payloads are supported, 1 or 2
    channels; stereo is arithmetic averaged and other rates are
    linearly resampled to 44100 Hz.
    """
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise AudioError(f"{path}: not a RIFF/WAVE file")
    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(raw):
        chunk_id = raw[pos : pos + 4]
        size = int.from_bytes(raw[pos + 4 : pos + 8], "little")
        if pos + 8 + size > len(raw):
            raise AudioError(f"{path}: truncated {chunk_id!r} chunk")
        body = raw[pos + 8 : pos + 8 + size]
        if chunk_id == b"fmt ":
            fmt = body
        elif chunk_id == b"data":
            payload = body
        pos += 8 + size + (size & 1)  # chunks are word aligned
    if fmt is None or payload is None:
        raise AudioError(f"{path}: missing fmt or data chunk")
    if len(fmt) < 16:
        raise AudioError(f"{path}: malformed fmt chunk")
    audio_format, channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if channels not in (1, 2):
        raise AudioError(f"{path}: {channels} channels unsupported")
    if block_align and len(payload) % block_align:
        raise AudioError(f"{path}: data chunk not a whole number of sample frames")
    if audio_format == 1 and bits == 16:
        x = np.frombuffer(payload, dtype="<i2").astype(np.float64) / 32768.0
    elif audio_format == 3 and bits == 32:
        x = np.frombuffer(payload, dtype="<f4").astype(np.float64)
    else:
        raise AudioError(f"{path}: unsupported WAV encoding (format {audio_format}, {bits}-bit)")
    x = x.reshape(-1, channels).mean(axis=1)
    if rate != SAMPLE_RATE:
        if rate <= 0:
            raise AudioError(f"{path}: bad sample rate {rate}")
        x = _resample(x, rate, SAMPLE_RATE)
    return AudioClip(x, SAMPLE_RATE)


def _resample(x: np.ndarray, rate: int, target: int) -> np.ndarray:
    if x.size < 2:
        return x.copy()
    new_n = round((x.size - 1) * target / rate) + 1
    old_t = np.arange(x.size) / rate
    new_t = np.arange(new_n) / target
    return np.interp(new_t, old_t, x)


@lru_cache(maxsize=None)
def _window(size: int) -> np.ndarray:
    # periodic Hann, the usual analysis choice
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(size) / size)


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=None)
def _filterbank() -> tuple:
    """(bins, bands) triangle weights and the band center frequencies."""
    edges = _mel_to_hz(np.linspace(_hz_to_mel(MEL_FMIN), _hz_to_mel(MEL_FMAX), NUM_BANDS + 2))
    freqs = np.arange(NUM_BINS) * (SAMPLE_RATE / FFT_SIZE)
    weights = np.zeros((NUM_BINS, NUM_BANDS))
    for b in range(NUM_BANDS):
        lo, center, hi = edges[b], edges[b + 1], edges[b + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        weights[:, b] = np.clip(np.minimum(rising, falling), 0.0, None)
    return weights, edges[1:-1].copy()


def mel_filterbank() -> tuple:
    """Return (weights, band_centers); weights has shape (bins, bands)."""
    weights, centers = _filterbank()
    return weights.copy(), centers.copy()


def frame_count(n_samples: int) -> int:
    return n_samples // HOP + 1


def _padded(x: np.ndarray) -> np.ndarray:
    half = FFT_SIZE // 2
    return np.pad(x, (half, half))


def _stft_frames(padded: np.ndarray, f0: int, f1: int) -> np.ndarray:
    """Magnitude STFT for frames [f0, f1) of an already padded signal."""
    half = FFT_SIZE // 2
    out = np.empty((f1 - f0, NUM_BINS, NUM_CHANNELS))
    centers = np.arange(f0, f1) * HOP + half
    for ci, size in enumerate(WINDOW_SIZES):
        starts = centers - size // 2
        segments = sliding_window_view(padded, size)[starts]
        spectra = np.fft.rfft(segments * _window(size), n=FFT_SIZE, axis=1)
        out[:, :, ci] = np.abs(spectra)
    return out


def multiwindow_stft(clip: AudioClip) -> np.ndarray:
    """All three magnitude STFT channels, shape (frames, 2049, 3)."""
    if clip.sample_rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz input, got {clip.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < HOP:
        raise AudioError(f"clip of {x.size} samples is shorter than one hop ({HOP})")
    return _stft_frames(_padded(x), 0, frame_count(x.size))


def mel_project(stft: np.ndarray) -> MelSpectrogram:
    """Project magnitude STFT channels onto the 80 log-mel bands."""
    weights, centers = _filterbank()
    banded = np.tensordot(stft, weights, axes=([1], [0]))  # (frames, 3, 80)
    data = np.log(banded.transpose(0, 2, 1) + LOG_FLOOR)
    return MelSpectrogram(np.ascontiguousarray(data), centers.copy())


def mel_features(clip: AudioClip) -> MelSpectrogram:
    """Full clip to log-mel pipeline, chunked to bound peak memory."""
    if clip.sample_rate != SAMPLE_RATE:
        raise AudioError(f"expected {SAMPLE_RATE} Hz input, got {clip.sample_rate}")
    x = np.asarray(clip.samples, dtype=np.float64)
    if x.size < HOP:
        raise AudioError(f"clip of {x.size} samples is shorter than one hop ({HOP})")
    frames = frame_count(x.size)
    padded = _padded(x)
    weights, centers = _filterbank()
    out = np.empty((frames, NUM_BANDS, NUM_CHANNELS))
    for f0 in range(0, frames, _CHUNK_FRAMES):
        f1 = min(frames, f0 + _CHUNK_FRAMES)
        stft = _stft_frames(padded, f0, f1)
        banded = np.tensordot(stft, weights, axes=([1], [0]))
        out[f0:f1] = np.log(banded.transpose(0, 2, 1) + LOG_FLOOR)
    return MelSpectrogram(out, centers.copy())


def _fsum_over(parts: list) -> np.ndarray:
    """Order-independent elementwise sum of equally shaped arrays."""
    stack = np.stack([np.asarray(p, dtype=np.float64) for p in parts])
    flat = stack.reshape(stack.shape[0], -1)
    out = np.array([math.fsum(flat[:, i]) for i in range(flat.shape[1])])
    return out.reshape(stack.shape[1:])


def fit_normalization(spectrograms) -> NormalizationStats:
    """Pooled per (band, channel) mean/std over all frames of all inputs.

    Uses exact summation over per-file partials, so the result does not
    depend on the order the spectrograms arrive in.
    """
    specs = list(spectrograms)
    if not specs:
        raise AudioError("fit_normalization needs at least one spectrogram")
    n = sum(s.data.shape[0] for s in specs)
    mean = _fsum_over([s.data.sum(axis=0) for s in specs]) / n
    var = _fsum_over([((s.data - mean) ** 2).sum(axis=0) for s in specs]) / n
    std = np.maximum(np.sqrt(var), STD_FLOOR)
    return NormalizationStats(mean, std)


def apply_normalization(spec: MelSpectrogram, stats: NormalizationStats) -> MelSpectrogram:
    """Shift and scale each (band, channel) lane by the fitted stats."""
    if spec.data.shape[1:] != stats.mean.shape:
        raise AudioError(
            f"spectrogram lanes {spec.data.shape[1:]} do not match stats {stats.mean.shape}"
        )
    return MelSpectrogram((spec.data - stats.mean) / stats.std, spec.band_centers, spec.hop_s)
