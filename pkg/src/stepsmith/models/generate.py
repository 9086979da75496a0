"""Autoregressive symbol decoding for placed steps.

Placement fixes the timing; this module walks those (beat, slot)
locations in order, builds a selection example from the symbols chosen
so far, and samples the next symbol from the model's masked
distribution. Masking enforces playability as the chart grows:

* the empty symbol is never allowed (a placement must carry an action);
* a held column only accepts nothing (0) or a release (3);
* a free column never accepts a release;
* the final placement forces a release on every still-open column and
  refuses new hold starts, so holds always close.

Temperature 0 decodes greedily with ties broken toward the lowest
symbol index, which makes generation bit-reproducible; positive
temperatures sample from the renormalized masked distribution with a
seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stepsmith.beatgrid import SelectionExample, _audio_patch
from stepsmith.errors import DataError
from stepsmith.models.selection import NUM_SYMBOLS, SelectionModel, selection_forward
from stepsmith.simfile import SLOTS_PER_BEAT, StepSymbol

_ALL = np.arange(NUM_SYMBOLS)
_DIGITS = np.stack([(_ALL >> (2 * (3 - c))) & 3 for c in range(4)], axis=1)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 1.0
    seed: int = 0


def _valid_mask(open_cols, final: bool) -> np.ndarray:
    ok = np.ones(NUM_SYMBOLS, dtype=bool)
    ok[0] = False  # every placement carries at least one arrow action
    for col in range(4):
        d = _DIGITS[:, col]
        if open_cols[col]:
            ok &= (d == 3) if final else (d == 0) | (d == 3)
        else:
            ok &= d != 3
            if final:
                ok &= d != 2  # a hold opened here could never close
    return ok


def _pick(probs: np.ndarray, mask: np.ndarray, temperature: float, rng) -> int:
    scored = mask & (probs > 0.0)
    if not scored.any():
        # model put zero mass on every valid symbol: take the lowest valid
        return int(np.flatnonzero(mask)[0])
    if temperature == 0.0:
        masked = np.where(scored, probs, -1.0)
        return int(np.argmax(masked))  # first max, so ties go to lowest index
    log_w = np.full(NUM_SYMBOLS, -np.inf)
    log_w[scored] = np.log(probs[scored]) / temperature
    log_w -= log_w.max()
    weights = np.exp(log_w)
    weights[~scored] = 0.0
    return int(rng.choice(NUM_SYMBOLS, p=weights / weights.sum()))


def generate_steps(model: SelectionModel, placements: list, spec, tempo,
                   sampling: SamplingConfig = SamplingConfig()) -> list:
    """Choose a symbol for every placement; returns (beat, StepSymbol) rows."""
    if sampling.temperature < 0:
        raise DataError(f"temperature must be >= 0, got {sampling.temperature}")
    ks = []
    for beat_index, slot in placements:
        if not 0 <= slot < SLOTS_PER_BEAT:
            raise DataError(f"slot {slot} outside [0, {SLOTS_PER_BEAT})")
        ks.append(int(beat_index) * SLOTS_PER_BEAT + int(slot))
    if any(k2 <= k1 for k1, k2 in zip(ks, ks[1:])):
        raise DataError("placements must be sorted with strictly increasing beats")
    if not ks:
        return []

    cfg = model.config
    beats = [float(k) / SLOTS_PER_BEAT for k in ks]
    n = len(beats)
    data = np.asarray(spec.data, dtype=np.float32)
    period = 60.0 / tempo.bpm
    patches = [
        _audio_patch(
            data,
            int(np.rint((tempo.offset_s + beat * period) / spec.hop_s)),
            cfg.patch_frames,
        )
        for beat in beats
    ]
    zero_patch = np.zeros((cfg.patch_frames,) + data.shape[1:], dtype=np.float32)

    def gaps(r):
        if not 0 <= r < n:
            return (0.0, 0.0)
        prev_gap = beats[r] - beats[r - 1] if r > 0 else 0.0
        next_gap = beats[r + 1] - beats[r] if r < n - 1 else 0.0
        return (prev_gap, next_gap)

    rng = np.random.default_rng(sampling.seed)
    chosen: list = []
    open_cols = [False] * 4
    rows = []
    for i in range(n):
        history = np.zeros(cfg.history_steps, dtype=np.int32)
        for j in range(cfg.history_steps):
            r = i - cfg.history_steps + j
            if r >= 0:
                history[j] = chosen[r]
        delta = np.asarray(
            [gaps(i - cfg.history_steps + 1 + j) for j in range(cfg.history_steps)],
            dtype=np.float32,
        )
        past = np.stack([
            patches[r] if r >= 0 else zero_patch
            for r in range(i - cfg.audio_steps + 1, i + 1)
        ])
        future = np.stack([
            patches[r] if r < n else zero_patch
            for r in range(i, i + cfg.audio_steps)
        ])
        example = SelectionExample(history, delta, past, future, target=0)

        probs = selection_forward(model, example)
        mask = _valid_mask(open_cols, final=(i == n - 1))
        index = _pick(probs, mask, sampling.temperature, rng)
        chosen.append(index)
        symbol = StepSymbol(index)
        for col, digit in enumerate(symbol.digits):
            if digit == 2:
                open_cols[col] = True
            elif digit == 3:
                open_cols[col] = False
        rows.append((beats[i], symbol))
    return rows
