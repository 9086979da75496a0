"""Step selection network: symbol history plus audio in, 256-way choice out.

Three input paths meet in the head:

* symbolic: each of the 64 history steps becomes one-hot(256) plus the
  two delta-beat gaps of the row being predicted there, through two
  LSTM(256) layers;
* audio past: (8, 9, 80, 3) patches at the last 8 rows' times through
  ConvLSTM(8) then ConvLSTM(16), no pooling;
* audio future: same stack with separate weights, consumed reversed so
  the recurrence ends on the current row.

The final hidden states (symbolic (256,), each audio branch flattened
to 9*80*16 = 11520 at full size) concatenate into the 512/256
leaky-ReLU head with 50% dropout, ending in a zero-initialized softmax
layer, so an untrained model is exactly uniform over the 256 symbols.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from stepsmith.errors import DataError
from stepsmith.neural.layers import ConvLstmCell, Dense, LstmCell
from stepsmith.neural.tensor import (
    Tensor,
    concat,
    dropout,
    leaky_relu,
    reshape,
    softmax,
)
from stepsmith.simfile import NUM_SYMBOLS


@dataclass(frozen=True)
class SelectionConfig:
    history_steps: int = 64
    lstm_units: int = 256
    audio_steps: int = 8
    patch_frames: int = 9
    bands: int = 80
    channels: int = 3
    conv_units: tuple = (8, 16)
    head_units: tuple = (512, 256)
    head_dropout: float = 0.5
    leaky_slope: float = 0.3


class _AudioBranch:
    def __init__(self, cfg: SelectionConfig, rng, name: str):
        c1, c2 = cfg.conv_units
        self.conv1 = ConvLstmCell(cfg.channels, c1, rng, name=f"{name}/conv1")
        self.conv2 = ConvLstmCell(c1, c2, rng, name=f"{name}/conv2")
        self.flat_dim = cfg.patch_frames * cfg.bands * c2

    def params(self) -> dict:
        return {**self.conv1.params(), **self.conv2.params()}

    def final_state(self, patches) -> Tensor:
        steps = [Tensor(patches[t][None]) for t in range(patches.shape[0])]
        hs = self.conv2.forward(self.conv1.forward(steps))
        return reshape(hs[-1], (1, self.flat_dim))


class SelectionModel:
    def __init__(self, config: SelectionConfig = SelectionConfig(), seed: int = 0):
        rng = np.random.default_rng(seed)
        self.config = config
        self.lstm1 = LstmCell(NUM_SYMBOLS + 2, config.lstm_units, rng, name="sym/lstm1")
        self.lstm2 = LstmCell(config.lstm_units, config.lstm_units, rng, name="sym/lstm2")
        self.audio_past = _AudioBranch(config, rng, "past")
        self.audio_future = _AudioBranch(config, rng, "future")
        u1, u2 = config.head_units
        head_in = config.lstm_units + 2 * self.audio_past.flat_dim
        self.head1 = Dense(head_in, u1, rng, name="head/dense1")
        self.head2 = Dense(u1, u2, rng, name="head/dense2")
        self.head_out = Dense(u2, NUM_SYMBOLS, zero_init=True, name="head/out")

    def params(self) -> dict:
        out = {}
        for part in (self.lstm1, self.lstm2, self.audio_past, self.audio_future,
                     self.head1, self.head2, self.head_out):
            out.update(part.params())
        return out

    def load_state(self, state: dict) -> None:
        for name, param in self.params().items():
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
        if example.history.shape != (cfg.history_steps,):
            raise DataError(
                f"history shape {example.history.shape}, model wants ({cfg.history_steps},)"
            )
        if example.delta_beats.shape != (cfg.history_steps, 2):
            raise DataError(
                f"delta shape {example.delta_beats.shape}, "
                f"model wants ({cfg.history_steps}, 2)"
            )
        want = (cfg.audio_steps, cfg.patch_frames, cfg.bands, cfg.channels)
        for label, patches in (("past", example.audio_past),
                               ("future", example.audio_future)):
            if patches.shape != want:
                raise DataError(f"{label} audio shape {patches.shape}, model wants {want}")

    def forward_logits(self, example, training: bool = False, rng=None) -> Tensor:
        """Pre-softmax symbol scores for one example, shape (1, 256)."""
        self._check(example)
        cfg = self.config
        dtype = self._dtype()

        symbolic = np.zeros((cfg.history_steps, NUM_SYMBOLS + 2), dtype=dtype)
        symbolic[np.arange(cfg.history_steps), example.history] = 1.0
        symbolic[:, NUM_SYMBOLS:] = example.delta_beats
        seq = [Tensor(symbolic[t][None]) for t in range(cfg.history_steps)]
        sym_final = self.lstm2.forward(self.lstm1.forward(seq))[-1]

        past = self.audio_past.final_state(
            np.asarray(example.audio_past, dtype=dtype))
        future = self.audio_future.final_state(
            np.asarray(example.audio_future, dtype=dtype)[::-1])

        x = concat([sym_final, past, future], axis=1)
        for layer in (self.head1, self.head2):
            x = leaky_relu(layer(x), slope=cfg.leaky_slope)
            x = dropout(x, cfg.head_dropout, training, rng)
        return self.head_out(x)

    def forward(self, example, training: bool = False, rng=None) -> Tensor:
        return softmax(self.forward_logits(example, training, rng))


def selection_forward(model: SelectionModel, example) -> np.ndarray:
    """Inference-mode symbol distribution, shape (256,)."""
    return np.asarray(model.forward(example, training=False).data[0])
