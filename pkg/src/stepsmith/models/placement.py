"""Step placement network: per-beat audio context in, 48 slot scores out.

Architecture, mirrored for the past and future branches:

    (T, 32, 80, 3) -> ConvLSTM(16) -> freq pool -> ConvLSTM(32)
                   -> freq pool -> flatten+aux -> LSTM(128) -> LSTM(128)

The future branch consumes its context reversed, so both recurrences
end on the current beat; each branch contributes its final hidden
state. The two 128-wide finals concatenate into a 256-wide code that a
512/256 leaky-ReLU head maps to 48 sigmoid slot probabilities. The
output layer starts at zero, so an untrained model scores every slot
exactly 0.5.

All dimensions live in PlacementConfig; the defaults give the full-size
model (flattened ConvLSTM output 32*8*32 = 8192, +2 aux -> LSTM input
8194) while tests shrink them to keep gradient checks and overfit runs
fast.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stepsmith.beatgrid import make_placement_examples, placement_targets
from stepsmith.errors import DataError
from stepsmith.neural.layers import ConvLstmCell, Dense, LstmCell
from stepsmith.neural.tensor import (
    Tensor,
    concat,
    dropout,
    leaky_relu,
    maxpool_freq,
    reshape,
    sigmoid,
)
from stepsmith.simfile import Chart, SLOTS_PER_BEAT


@dataclass(frozen=True)
class PlacementConfig:
    context_beats: int = 16
    samples_per_beat: int = 32
    bands: int = 80
    channels: int = 3
    conv_units: tuple = (16, 32)
    lstm_units: int = 128
    head_units: tuple = (512, 256)
    slots: int = SLOTS_PER_BEAT
    lstm_dropout: float = 0.2
    head_dropout: float = 0.5
    leaky_slope: float = 0.3


def _pooled(bands: int) -> int:
    return max(1, bands // 3)


class _Branch:
    """One directional encoder/decoder stack with its own weights."""

    def __init__(self, cfg: PlacementConfig, rng, name: str):
        c1, c2 = cfg.conv_units
        self.cfg = cfg
        self.conv1 = ConvLstmCell(cfg.channels, c1, rng, name=f"{name}/conv1")
        self.conv2 = ConvLstmCell(c1, c2, rng, name=f"{name}/conv2")
        self.flat_dim = cfg.samples_per_beat * _pooled(_pooled(cfg.bands)) * c2
        self.lstm1 = LstmCell(self.flat_dim + 2, cfg.lstm_units, rng, name=f"{name}/lstm1")
        self.lstm2 = LstmCell(cfg.lstm_units, cfg.lstm_units, rng, name=f"{name}/lstm2")

    def params(self) -> dict:
        out = {}
        for layer in (self.conv1, self.conv2, self.lstm1, self.lstm2):
            out.update(layer.params())
        return out

    def final_state(self, ctx, aux, training, rng) -> Tensor:
        cfg = self.cfg
        steps = [Tensor(ctx[t][None]) for t in range(ctx.shape[0])]
        hs = self.conv1.forward(steps)
        hs = [maxpool_freq(h) for h in hs]
        hs = self.conv2.forward(hs)
        hs = [maxpool_freq(h) for h in hs]
        seq = [
            concat([reshape(h, (1, self.flat_dim)), Tensor(aux[t][None])], axis=1)
            for t, h in enumerate(hs)
        ]
        hs = self.lstm1.forward(seq)
        hs = [dropout(h, cfg.lstm_dropout, training, rng) for h in hs]
        hs = self.lstm2.forward(hs)
        hs = [dropout(h, cfg.lstm_dropout, training, rng) for h in hs]
        return hs[-1]


class PlacementModel:
    def __init__(self, config: PlacementConfig = PlacementConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.past = _Branch(config, rng, "past")
        self.future = _Branch(config, rng, "future")
        u1, u2 = config.head_units
        self.head1 = Dense(2 * config.lstm_units, u1, rng, name="head/dense1")
        self.head2 = Dense(u1, u2, rng, name="head/dense2")
        self.head_out = Dense(u2, config.slots, zero_init=True, name="head/out")

    def params(self) -> dict:
        out = {}
        out.update(self.past.params())
        out.update(self.future.params())
        for layer in (self.head1, self.head2, self.head_out):
            out.update(layer.params())
        return out

    def load_state(self, state: dict) -> None:
        params = self.params()
        for name, param in params.items():
            if name not in state:
                raise DataError(f"missing parameter {name!r} in state")
            if state[name].shape != param.data.shape:
                raise DataError(
                    f"parameter {name!r} has shape {state[name].shape}, "
                    f"model wants {param.data.shape}"
                )
            param.data = state[name].astype(param.data.dtype, copy=True)

    def _dtype(self):
        return self.head1.weights.data.dtype

    def _check(self, example):
        cfg = self.config
        want = (cfg.context_beats, cfg.samples_per_beat, cfg.bands, cfg.channels)
        for label, ctx in (("past", example.past_ctx), ("future", example.future_ctx)):
            if ctx.shape != want:
                raise DataError(f"{label} context shape {ctx.shape}, model wants {want}")

    def forward(self, example, training: bool = False, rng=None) -> Tensor:
        """Slot probabilities for one example as a (1, slots) tensor."""
        self._check(example)
        cfg = self.config
        dtype = self._dtype()
        past_ctx = np.asarray(example.past_ctx, dtype=dtype)
        future_ctx = np.asarray(example.future_ctx, dtype=dtype)[::-1]
        past_aux = np.asarray(example.past_aux, dtype=dtype)
        future_aux = np.asarray(example.future_aux, dtype=dtype)[::-1]

        past_final = self.past.final_state(past_ctx, past_aux, training, rng)
        future_final = self.future.final_state(future_ctx, future_aux, training, rng)
        x = concat([past_final, future_final], axis=1)
        for layer in (self.head1, self.head2):
            x = leaky_relu(layer(x), slope=cfg.leaky_slope)
            x = dropout(x, cfg.head_dropout, training, rng)
        return sigmoid(self.head_out(x))


def placement_forward(model: PlacementModel, example) -> np.ndarray:
    """Inference-mode slot probabilities, shape (slots,)."""
    return np.asarray(model.forward(example, training=False).data[0])


def predict_placements(model: PlacementModel, frames, bpm, difficulty,
                       threshold: float = 0.5) -> list:
    """Threshold per-slot probabilities into (beat, slot) step locations.

    No suppression or smoothing: every slot scoring at or above the
    threshold becomes a step.
    """
    empty = Chart("Challenge", int(difficulty), ())
    targets = placement_targets(empty, len(frames))
    examples = make_placement_examples(
        frames, targets, bpm, difficulty, context_beats=model.config.context_beats
    )
    out = []
    for example in examples:
        probs = placement_forward(model, example)
        for slot in np.flatnonzero(probs >= threshold):
            out.append((example.target.beat_index, int(slot)))
    return out
