"""Beat-aligned tensors bridging audio features and charts.

Charts and spectrograms live on different clocks: rows sit on beat
fractions while mel frames tick every 10 ms. This module resamples the
spectrogram onto the beat grid (32 samples per beat, nearest frame, no
interpolation, so fast songs repeat frames), rasterizes chart rows onto
the 48-slot placement grid, and assembles the example structures the
placement and selection models train on. It also owns the song-level
dataset split and the seeded batch sampler.

Conventions worth calling out:

* Context windows include the current position in both directions: a
  placement example's past context ends at the current beat and its
  future context starts there. Selection audio patches do the same with
  rows instead of beats. Consumers reverse the future branch.
* ``delta_beats[j]`` describes the row *predicted* at autoregressive
  position j (its gap to the previous and next rows), so the last entry
  always describes the example's target row. Missing neighbours and
  padding use 0.0, which real gaps never take.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from stepsmith.audiofeat import HOP_S, MelSpectrogram, NUM_BANDS, WINDOW_SIZES
from stepsmith.errors import DataError
from stepsmith.simfile import SLOTS_PER_BEAT, Chart
from stepsmith.tempo import BPM_MAX, BPM_MIN, TempoEstimate

SAMPLES_PER_BEAT = 32
CONTEXT_BEATS = 16
HISTORY_STEPS = 64
AUDIO_CONTEXT_STEPS = 8
PATCH_FRAMES = 9

_FRAME_SHAPE = (SAMPLES_PER_BEAT, NUM_BANDS, len(WINDOW_SIZES))
_PATCH_SHAPE = (PATCH_FRAMES, NUM_BANDS, len(WINDOW_SIZES))


@dataclass(frozen=True, eq=False)
class BeatFrame:
    """Mel energies resampled to 32 evenly spaced points across one beat."""

    data: np.ndarray  # (32, 80, 3) float32
    beat_index: int
    bpm: float
    difficulty: int


@dataclass(frozen=True, eq=False)
class PlacementVector:
    """48 binary step slots for one beat, slot k at beat fraction k/48."""

    slots: np.ndarray  # (48,) uint8
    beat_index: int


@dataclass(frozen=True, eq=False)
class PlacementExample:
    past_ctx: np.ndarray  # (16, 32, 80, 3); timestep 15 is the current beat
    future_ctx: np.ndarray  # (16, 32, 80, 3); timestep 0 is the current beat
    past_aux: np.ndarray  # (16, 2) rows of (bpm, difficulty)
    future_aux: np.ndarray  # (16, 2)
    target: PlacementVector


@dataclass(frozen=True, eq=False)
class SelectionExample:
    history: np.ndarray  # (64,) int32 symbol indices, left-padded with 0
    delta_beats: np.ndarray  # (64, 2) float32
    audio_past: np.ndarray  # (8, 9, 80, 3); timestep 7 is the target row
    audio_future: np.ndarray  # (8, 9, 80, 3); timestep 0 is the target row
    target: int


@dataclass(frozen=True)
class SplitAssignment:
    """Song-level train/valid/test partition; charts follow their song."""

    by_song: dict

    def songs(self, split: str) -> list:
        return sorted(s for s, where in self.by_song.items() if where == split)


def _nearest_frame(time_s, hop_s):
    return int(np.rint(time_s / hop_s))


def beat_frames(spec: MelSpectrogram, tempo: TempoEstimate, n_beats: int,
                difficulty: int) -> list:
    """Resample a spectrogram into per-beat (32, 80, 3) blocks.

    Sample k of beat b takes the mel frame nearest to
    ``offset + (b + k/32) * 60 / bpm``. Nearest-frame selection means
    slow songs skip frames and fast songs duplicate them. Samples that
    land outside the audio come back as zeros.
    """
    if not BPM_MIN <= tempo.bpm <= BPM_MAX:
        raise DataError(f"bpm {tempo.bpm} outside [{BPM_MIN}, {BPM_MAX}]")
    data = np.asarray(spec.data, dtype=np.float32)
    n_frames = data.shape[0]
    period = 60.0 / tempo.bpm
    fractions = np.arange(SAMPLES_PER_BEAT) / SAMPLES_PER_BEAT

    out = []
    for b in range(n_beats):
        times = tempo.offset_s + (b + fractions) * period
        idx = np.rint(times / spec.hop_s).astype(np.int64)
        valid = (idx >= 0) & (idx < n_frames)
        block = np.zeros(_FRAME_SHAPE, dtype=np.float32)
        block[valid] = data[idx[valid]]
        out.append(BeatFrame(block, b, float(tempo.bpm), int(difficulty)))
    return out


def placement_targets(chart: Chart, n_beats: int) -> list:
    """Rasterize chart rows onto per-beat 48-slot binary vectors.

    Each row snaps to the nearest global 1/48 slot; two rows snapping to
    the same slot is an error. Rows at or past the ``n_beats`` horizon
    are dropped (the audio simply ends before them).
    """
    grid = np.zeros((n_beats, SLOTS_PER_BEAT), dtype=np.uint8)
    taken: dict = {}
    for beat, _sym in chart.rows:
        k = int(round(beat * SLOTS_PER_BEAT))
        if k in taken:
            raise DataError(
                f"rows at beats {taken[k]} and {beat} both snap to slot "
                f"{k % SLOTS_PER_BEAT} of beat {k // SLOTS_PER_BEAT}"
            )
        taken[k] = beat
        vec = k // SLOTS_PER_BEAT
        if 0 <= vec < n_beats:
            grid[vec, k % SLOTS_PER_BEAT] = 1
    return [PlacementVector(grid[b], b) for b in range(n_beats)]


def make_placement_examples(frames: list, targets: list, bpm: float,
                            difficulty: int,
                            context_beats: int = CONTEXT_BEATS) -> list:
    """Pair every beat with its 16-beat past and future audio context.

    Beats outside the song contribute zero blocks but keep real
    (bpm, difficulty) aux rows, so the models can always read the tempo.
    The context width is overridable for scaled-down models.
    """
    if len(frames) != len(targets):
        raise DataError(
            f"{len(frames)} beat frames vs {len(targets)} target vectors"
        )
    for frame, target in zip(frames, targets):
        if frame.beat_index != target.beat_index:
            raise DataError(
                f"frame beat {frame.beat_index} != target beat {target.beat_index}"
            )
    n = len(frames)
    if n == 0:
        return []
    zero_block = np.zeros_like(frames[0].data)
    aux = np.tile(
        np.asarray([bpm, difficulty], dtype=np.float32), (context_beats, 1)
    )

    def block(b):
        return frames[b].data if 0 <= b < n else zero_block

    examples = []
    for b in range(n):
        past = np.stack([block(t) for t in range(b - context_beats + 1, b + 1)])
        future = np.stack([block(t) for t in range(b, b + context_beats)])
        examples.append(
            PlacementExample(past, future, aux.copy(), aux.copy(), targets[b])
        )
    return examples


def _audio_patch(data: np.ndarray, center: int,
                 patch_frames: int = PATCH_FRAMES) -> np.ndarray:
    """Consecutive mel frames centred on ``center``, zero-padded."""
    patch = np.zeros((patch_frames,) + data.shape[1:], dtype=np.float32)
    half = patch_frames // 2
    lo = max(0, center - half)
    hi = min(data.shape[0], center + half + 1)
    if hi > lo:
        patch[lo - (center - half) : hi - (center - half)] = data[lo:hi]
    return patch


def make_selection_examples(chart: Chart, spec: MelSpectrogram,
                            tempo: TempoEstimate) -> list:
    """Build one autoregressive example per chart row after the first.

    For target row i: history holds the previous 64 symbol indices,
    delta_beats[j] gives the (previous, next) gaps of the row predicted
    at position j, and the audio branches carry 9-frame patches at the
    times of rows i-7..i (past) and i..i+7 (future).
    """
    rows = chart.rows
    if len(rows) < 2:
        return []
    beats = [beat for beat, _ in rows]
    indices = [sym.index for _, sym in rows]
    data = np.asarray(spec.data, dtype=np.float32)
    period = 60.0 / tempo.bpm
    centers = [
        _nearest_frame(tempo.offset_s + beat * period, spec.hop_s)
        for beat in beats
    ]
    patches = [_audio_patch(data, c) for c in centers]
    zero_patch = np.zeros(_PATCH_SHAPE, dtype=np.float32)
    last = len(rows) - 1

    def gaps(r):
        if not 0 <= r <= last:
            return (0.0, 0.0)
        prev_gap = beats[r] - beats[r - 1] if r > 0 else 0.0
        next_gap = beats[r + 1] - beats[r] if r < last else 0.0
        return (prev_gap, next_gap)

    examples = []
    for i in range(1, len(rows)):
        history = np.zeros(HISTORY_STEPS, dtype=np.int32)
        for j in range(HISTORY_STEPS):
            r = i - HISTORY_STEPS + j
            if r >= 0:
                history[j] = indices[r]
        delta = np.asarray(
            [gaps(i - HISTORY_STEPS + 1 + j) for j in range(HISTORY_STEPS)],
            dtype=np.float32,
        )
        past = np.stack([
            patches[r] if r >= 0 else zero_patch
            for r in range(i - AUDIO_CONTEXT_STEPS + 1, i + 1)
        ])
        future = np.stack([
            patches[r] if r <= last else zero_patch
            for r in range(i, i + AUDIO_CONTEXT_STEPS)
        ])
        examples.append(
            SelectionExample(history, delta, past, future, indices[i])
        )
    return examples


def split_dataset(songs: list, seed: int) -> SplitAssignment:
    """Deterministically partition song ids roughly 8/1/1.

    Splitting happens per song, so every chart and every mirrored
    variant of a song lands in the same partition.
    """
    unique = sorted(set(songs))
    if len(unique) < 3:
        raise DataError(f"need at least 3 songs to split, got {len(unique)}")
    order = list(unique)
    random.Random(seed).shuffle(order)
    n = len(order)
    n_valid = max(1, round(0.1 * n))
    n_test = max(1, round(0.1 * n))
    assignment = {}
    for pos, song in enumerate(order):
        if pos < n - n_valid - n_test:
            assignment[song] = "train"
        elif pos < n - n_test:
            assignment[song] = "valid"
        else:
            assignment[song] = "test"
    return SplitAssignment(assignment)


def batch_iterator(examples: list, batch_size: int, batches_per_epoch: int,
                   seed: int):
    """Endless stream of uniformly sampled batches.

    Walks a seeded permutation of the examples and reshuffles whenever
    the pool runs dry, so coverage stays even without any class
    rebalancing. Every ``batches_per_epoch`` consecutive batches form
    one epoch. Identical seeds replay identical batches.
    """
    if not examples:
        raise DataError("cannot batch an empty example list")
    rng = random.Random(seed)
    pool: list = []
    while True:
        for _ in range(batches_per_epoch):
            batch = []
            while len(batch) < batch_size:
                if not pool:
                    pool = list(range(len(examples)))
                    rng.shuffle(pool)
                batch.append(examples[pool.pop()])
            yield batch
