"""Dataset discovery and example assembly for training and evaluation.

A dataset directory holds one subdirectory (or at least one .sm file)
per song; each simfile's #MUSIC tag names its WAV relative to the
simfile. Songs are split 8/1/1 by song id so no chart of a song leaks
across splits, normalization statistics come from the training split
only, and mirror augmentation is applied to selection examples alone:
mirrored arrows are new step sequences, but the audio (and therefore
where steps fall) is unchanged, so placement would only see duplicates.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

from stepsmith.audiofeat import MelSpectrogram, apply_normalization, fit_normalization
from stepsmith.beatgrid import (
    make_placement_examples,
    make_selection_examples,
    beat_frames,
    placement_targets,
    split_dataset,
)
from stepsmith.errors import DataError
from stepsmith.pipeline.cache import featurize_many, load_entry
from stepsmith.pipeline.config import PipelineConfig
from stepsmith.simfile import Simfile, parse_simfile
from stepsmith.tempo import TempoEstimate


@dataclass(frozen=True)
class SongEntry:
    song_id: str
    sm_path: Path
    wav_path: Path


def discover_songs(dataset_dir) -> list:
    """All songs under a dataset directory, sorted by song id."""
    root = Path(dataset_dir)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    entries = []
    for sm_path in sorted(root.rglob("*.sm")):
        sim = parse_simfile(sm_path.read_text(encoding="utf-8"))
        if not sim.music_path:
            raise DataError(f"{sm_path} has no #MUSIC tag")
        wav_path = sm_path.parent / sim.music_path
        if not wav_path.is_file():
            raise DataError(f"{sm_path} references missing audio {wav_path}")
        song_id = sm_path.relative_to(root).with_suffix("").as_posix()
        entries.append(SongEntry(song_id, sm_path, wav_path))
    if not entries:
        raise DataError(f"no .sm files found under {root}")
    return entries


def song_tempo(sim: Simfile) -> TempoEstimate:
    """The simfile's declared timing, for constant-BPM songs only."""
    if len(sim.bpm_segments) != 1 or sim.stop_segments:
        raise DataError("training needs constant-BPM simfiles without stops")
    return TempoEstimate(bpm=float(sim.bpm_segments[0][1]),
                         offset_s=sim.offset_s, confidence=1.0)


def beats_in_song(spec: MelSpectrogram, tempo: TempoEstimate, duration_s: float) -> int:
    period = 60.0 / tempo.bpm
    n = int((duration_s - tempo.offset_s) / period)
    return max(n, 1)


def chart_examples(chart, spec: MelSpectrogram, tempo: TempoEstimate,
                   n_beats: int, context_beats: int) -> tuple:
    """(placement examples, selection examples) for one chart."""
    frames = beat_frames(spec, tempo, n_beats, chart.fine_difficulty)
    targets = placement_targets(chart, n_beats)
    placement = make_placement_examples(frames, targets, tempo.bpm,
                                        chart.fine_difficulty,
                                        context_beats=context_beats)
    selection = make_selection_examples(chart, spec, tempo)
    return placement, selection


@dataclass(frozen=True)
class SplitExamples:
    placement: dict  # split name -> list of PlacementExample
    selection: dict  # split name -> list of SelectionExample
    norm: object  # NormalizationStats fit on the train split
    songs: dict  # split name -> tuple of song ids


def build_split_examples(cfg: PipelineConfig, augment_selection: bool = True) -> SplitExamples:
    from stepsmith.simfile import augment_dataset

    entries = discover_songs(cfg.dataset_dir)
    split = split_dataset([e.song_id for e in entries], cfg.seed)
    cache_paths = featurize_many([e.wav_path for e in entries], cfg.cache_dir,
                                 workers=cfg.workers)
    cached = dict(zip([e.song_id for e in entries], cache_paths))

    sims, raw = {}, {}
    for entry in entries:
        sims[entry.song_id] = parse_simfile(entry.sm_path.read_text(encoding="utf-8"))
        raw[entry.song_id] = load_entry(cached[entry.song_id])

    train_ids = split.songs("train")
    norm = fit_normalization([raw[sid].spec for sid in train_ids])

    placement = {"train": [], "valid": [], "test": []}
    selection = {"train": [], "valid": [], "test": []}
    for entry in entries:
        sim = sims[entry.song_id]
        which = split.by_song[entry.song_id]
        tempo = song_tempo(sim)
        spec = apply_normalization(raw[entry.song_id].spec, norm)
        n_beats = beats_in_song(spec, tempo, raw[entry.song_id].duration_s)
        for chart in sim.charts:
            if not chart.rows:
                warnings.warn(f"{entry.song_id}: skipping empty {chart.coarse_difficulty} chart")
                continue
            p_ex, s_ex = chart_examples(chart, spec, tempo, n_beats, cfg.context_beats)
            placement[which].extend(p_ex)
            if augment_selection and which == "train":
                mirrored = [c for c in augment_dataset([chart]) if c is not chart]
                for twin in mirrored:
                    s_ex = s_ex + make_selection_examples(twin, spec, tempo)
            selection[which].extend(s_ex)

    for split_name in ("train", "valid"):
        if not placement[split_name]:
            raise DataError(f"the {split_name} split produced no examples")
    return SplitExamples(placement=placement, selection=selection, norm=norm,
                         songs={name: split.songs(name) for name in ("train", "valid", "test")})
