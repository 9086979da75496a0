"""Parameterized layers over the autodiff ops.

Layers own their parameters as gradient-carrying tensors and expose a
flat params() dict keyed by slash-separated names, which is the
currency the optimizer and the checkpoint writer both work in.
Initialization is Glorot uniform from a caller-supplied generator so
whole models are reproducible from one seed; forget-gate biases start
at 1 and gate order is (input, forget, cell, output) everywhere.
"""

from __future__ import annotations

import numpy as np

from stepsmith.neural.tensor import (
    Tensor,
    add,
    concat,
    conv3x3,
    dense,
    lstm_cell,
    matmul,
    reshape,
    tensor,
)


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


class Dense:
    def __init__(self, input_size: int, units: int, rng=None, zero_init=False, name="dense"):
        self.name = name
        if zero_init:
            w = np.zeros((input_size, units), dtype=np.float32)
        else:
            w = glorot_uniform(rng, (input_size, units), input_size, units)
        self.weights = Tensor(w, requires_grad=True)
        self.bias = tensor(np.zeros(units), requires_grad=True)

    def params(self) -> dict:
        return {f"{self.name}/w": self.weights, f"{self.name}/b": self.bias}

    def __call__(self, x) -> Tensor:
        return dense(x, self.weights, self.bias)


class LstmCell:
    """Plain LSTM cell: preactivation = x W + h U + b, fused gate step."""

    def __init__(self, input_size: int, units: int, rng: np.random.Generator, name="lstm"):
        self.input_size = input_size
        self.units = units
        self.name = name
        self.w = Tensor(glorot_uniform(rng, (input_size, 4 * units), input_size, units),
                        requires_grad=True)
        self.u = Tensor(glorot_uniform(rng, (units, 4 * units), units, units),
                        requires_grad=True)
        b = np.zeros(4 * units, dtype=np.float32)
        b[units : 2 * units] = 1.0  # forget gate starts open
        self.bias = Tensor(b, requires_grad=True)

    def params(self) -> dict:
        return {f"{self.name}/w": self.w, f"{self.name}/u": self.u, f"{self.name}/b": self.bias}

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
        pre = add(add(matmul(x_t, self.w), matmul(h_prev, self.u)), self.bias)
        return lstm_cell(pre, c_prev)

    def forward(self, xs: list) -> list:
        """Run over a list of (batch, input_size) tensors; zero initial
        state; returns the hidden tensor for every step."""
        b = xs[0].data.shape[0]
        dtype = xs[0].data.dtype
        h = Tensor(np.zeros((b, self.units), dtype=dtype))
        c = Tensor(np.zeros((b, self.units), dtype=dtype))
        out = []
        for x_t in xs:
            if x_t.data.shape != (b, self.input_size):
                raise ValueError(
                    f"lstm expected ({b}, {self.input_size}) steps, got {x_t.data.shape}"
                )
            h, c = self.step(x_t, h, c)
            out.append(h)
        return out


class ConvLstmCell:
    """ConvLSTM cell: gates come from one 3x3 same-padded convolution
    of [x_t, h_prev] stacked on the channel axis."""

    def __init__(self, in_channels: int, units: int, rng: np.random.Generator, name="convlstm"):
        self.in_channels = in_channels
        self.units = units
        self.name = name
        fan = 9 * (in_channels + units)
        k = glorot_uniform(rng, (3, 3, in_channels + units, 4 * units), fan, 9 * units)
        self.kernel = Tensor(k, requires_grad=True)
        b = np.zeros(4 * units, dtype=np.float32)
        b[units : 2 * units] = 1.0
        self.bias = Tensor(b, requires_grad=True)

    def params(self) -> dict:
        return {f"{self.name}/kernel": self.kernel, f"{self.name}/b": self.bias}

    def step(self, x_t: Tensor, h_prev: Tensor, c_prev: Tensor):
        b, h_, w_, _ = x_t.data.shape
        stacked = concat([x_t, h_prev], axis=-1)
        pre = conv3x3(stacked, self.kernel, self.bias)
        flat_pre = reshape(pre, (b * h_ * w_, 4 * self.units))
        flat_c = reshape(c_prev, (b * h_ * w_, self.units))
        h, c = lstm_cell(flat_pre, flat_c)
        shape = (b, h_, w_, self.units)
        return reshape(h, shape), reshape(c, shape)

    def forward(self, xs: list) -> list:
        b, h_, w_, cin = xs[0].data.shape
        if cin != self.in_channels:
            raise ValueError(f"convlstm expected {self.in_channels} channels, got {cin}")
        dtype = xs[0].data.dtype
        shape = (b, h_, w_, self.units)
        h = Tensor(np.zeros(shape, dtype=dtype))
        c = Tensor(np.zeros(shape, dtype=dtype))
        out = []
        for x_t in xs:
            if x_t.data.shape != xs[0].data.shape:
                raise ValueError("convlstm steps must share one shape")
            h, c = self.step(x_t, h, c)
            out.append(h)
        return out


def _steps_of(sequence, rank: int) -> list:
    arr = sequence.data if isinstance(sequence, Tensor) else np.asarray(sequence)
    if arr.ndim != rank:
        raise ValueError(f"expected a rank-{rank} sequence, got shape {arr.shape}")
    return [Tensor(arr[t][None]) for t in range(arr.shape[0])]


def lstm_forward(cell: LstmCell, sequence) -> Tensor:
    """Unbatched convenience: (T, input_size) in, (T, units) out."""
    hs = cell.forward(_steps_of(sequence, 2))
    return concat(hs, axis=0)


def convlstm_forward(cell: ConvLstmCell, sequence) -> Tensor:
    """Unbatched convenience: (T, H, F, C) in, (T, H, F, units) out."""
    hs = cell.forward(_steps_of(sequence, 4))
    return concat(hs, axis=0)
