"""Define-by-run autodiff engine and the differentiable operations.

Every op builds a node holding the forward value, its parent nodes, and
a closure mapping the node's output gradient to one gradient per
parent. backward() walks the graph in reverse topological order
iteratively (no recursion, so sequence models of any length are safe)
and accumulates gradients into leaves. Nodes whose inputs do not
require gradients carry no graph bookkeeping at all, which keeps
inference allocation-light.

Dtype policy: ops compute in whatever float dtype their inputs carry.
Training runs float32; the gradient checker promotes parameters to
float64 and the same op implementations (and the same compiled
kernels, which are compiled for both widths) run in double precision.

The LSTM cell is a fused pair of nodes sharing one forward evaluation:
the cell state node owns the input/forget/cell gate gradients and the
hidden node owns the output gate, each padding its slice of the
preactivation gradient with zeros so the two contributions sum to the
full (M, 4U) gradient. Because the cell state is a parent of the
hidden state, topological order guarantees the hidden node's backward
(which feeds gradient into the cell state) runs first.
"""

from __future__ import annotations

import numpy as np

from stepsmith import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        if self.requires_grad:
            self._parents = tuple(_parents)
            self._backward = _backward
        else:
            self._parents = ()
            self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def backward(self, grad=None):
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that requires no gradient")
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without an explicit gradient needs a scalar")
            grad = np.ones_like(self.data)

        # iterative postorder so parents precede children in `topo`
        topo = []
        state = {}
        stack = [self]
        while stack:
            node = stack[-1]
            nid = id(node)
            mark = state.get(nid)
            if mark == 1:
                stack.pop()
                continue
            if mark == 0:
                state[nid] = 1
                topo.append(node)
                stack.pop()
                continue
            state[nid] = 0
            for p in node._parents:
                if p.requires_grad and state.get(id(p)) != 1:
                    stack.append(p)

        self.grad = grad if self.grad is None else self.grad + grad
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            for parent, g in zip(node._parents, node._backward(node.grad)):
                if g is None or not parent.requires_grad:
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
            if node is not self:
                node.grad = None  # free intermediate gradients eagerly

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def tensor(data, requires_grad=False, dtype=np.float32):
    """Leaf tensor with a defined dtype (float32 unless asked otherwise)."""
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=requires_grad)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=back)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)

    return Tensor(out, _parents=(a, b), _backward=back)


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shapes {a.data.shape} x {b.data.shape} incompatible")
    out = a.data @ b.data

    def back(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor(out, _parents=(a, b), _backward=back)


def reshape(x, shape):
    x = _as_tensor(x)
    out = x.data.reshape(shape)

    def back(g):
        return (g.reshape(x.data.shape),)

    return Tensor(out, _parents=(x,), _backward=back)


def concat(xs, axis: int):
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ValueError("concat needs at least one tensor")
    out = np.concatenate([x.data for x in xs], axis=axis)
    sizes = np.cumsum([x.data.shape[axis] for x in xs])[:-1]

    def back(g):
        return tuple(np.split(g, sizes, axis=axis))

    return Tensor(out, _parents=tuple(xs), _backward=back)


def dense(x, weights, bias):
    """x @ weights + bias, the plain affine map."""
    return add(matmul(x, weights), bias)


def sumall(x):
    """Reduce a tensor to its scalar sum."""
    x = _as_tensor(x)
    out = np.asarray(x.data.sum())

    def back(g):
        return (np.broadcast_to(g, x.data.shape).astype(x.data.dtype, copy=False),)

    return Tensor(out, _parents=(x,), _backward=back)


def leaky_relu(x, slope: float = 0.3):
    x = _as_tensor(x)
    out = np.where(x.data > 0, x.data, slope * x.data)

    def back(g):
        return (np.where(x.data > 0, g, slope * g),)

    return Tensor(out, _parents=(x,), _backward=back)


def sigmoid(x):
    x = _as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def back(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, _parents=(x,), _backward=back)


def tanh(x):
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, _parents=(x,), _backward=back)


def softmax(x, axis: int = -1):
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return ((g - inner) * out,)

    return Tensor(out, _parents=(x,), _backward=back)


def dropout(x, rate: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout: scales by 1/(1-rate) while training, identity
    at inference or rate 0."""
    x = _as_tensor(x)
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    keep /= 1.0 - rate
    out = x.data * keep

    def back(g):
        return (g * keep,)

    return Tensor(out, _parents=(x,), _backward=back)


def maxpool_freq(x, width: int = 3, stride: int = 3):
    """Max pool along the second-to-last axis (the frequency axis).

    F bands become F//width (tail truncated); inputs narrower than one
    window pool down to a single band instead of vanishing.
    """
    if width != stride:
        raise ValueError("only width == stride pooling is supported")
    x = _as_tensor(x)
    d = x.data
    if d.ndim < 2:
        raise ValueError(f"maxpool_freq needs at least 2 axes, got shape {d.shape}")
    f = d.shape[-2]
    if f < width:
        out = d.max(axis=-2, keepdims=True)
        idx = d.argmax(axis=-2)

        def back_small(g):
            gx = np.zeros_like(d)
            np.put_along_axis(gx, idx[..., None, :], g, axis=-2)
            return (gx,)

        return Tensor(out, _parents=(x,), _backward=back_small)

    f_out = f // width
    lead = d.shape[:-2]
    c = d.shape[-1]
    windows = d[..., : f_out * width, :].reshape(*lead, f_out, width, c)
    out = windows.max(axis=-2)
    idx = windows.argmax(axis=-2)  # first max wins ties, deterministically

    def back(g):
        gw = np.zeros_like(windows)
        np.put_along_axis(gw, idx[..., None, :], g[..., None, :], axis=-2)
        gx = np.zeros_like(d)
        gx[..., : f_out * width, :] = gw.reshape(*lead, f_out * width, c)
        return (gx,)

    return Tensor(out, _parents=(x,), _backward=back)


def conv3x3(x, kernel, bias):
    """Same-padded 3x3 convolution over the two middle axes of
    (batch, height, width, channels) input.

    kernel is (3, 3, in_channels, out_channels). The im2col buffer is
    recomputed during backward instead of cached; for the ConvLSTM
    workloads the buffer is 9x the input and caching one per timestep
    would dominate memory.
    """
    x, kernel, bias = _as_tensor(x), _as_tensor(kernel), _as_tensor(bias)
    b_, h_, w_, cin = x.data.shape
    kh, kw, kcin, cout = kernel.data.shape
    if (kh, kw) != (3, 3) or kcin != cin:
        raise ValueError(f"kernel {kernel.data.shape} does not fit input {x.data.shape}")
    cols = kernels.im2col3x3(x.data)
    wmat = kernel.data.reshape(9 * cin, cout)
    out = cols.reshape(-1, 9 * cin) @ wmat + bias.data
    out = out.reshape(b_, h_, w_, cout)

    def back(g):
        gflat = g.reshape(-1, cout)
        cols_again = kernels.im2col3x3(x.data).reshape(-1, 9 * cin)
        gw = (cols_again.T @ gflat).reshape(kernel.data.shape)
        gb = gflat.sum(axis=0)
        gcols = (gflat @ wmat.T).reshape(b_, h_, w_, 9 * cin)
        gx = kernels.col2im3x3(gcols, cin)
        return gx, gw, gb

    return Tensor(out, _parents=(x, kernel, bias), _backward=back)


def lstm_cell(preact, c_prev):
    """One fused LSTM cell step.

    preact is (M, 4*units) ordered (input, forget, cell, output);
    c_prev is (M, units). Returns (h, c) sharing one kernel evaluation.
    """
    preact, c_prev = _as_tensor(preact), _as_tensor(c_prev)
    m, four_u = preact.data.shape
    u = c_prev.data.shape[-1]
    if four_u != 4 * u or c_prev.data.shape[0] != m:
        raise ValueError(f"lstm_cell shapes {preact.data.shape} / {c_prev.data.shape} mismatch")
    h_d, c_d, gates, tanh_c = kernels.cell_forward(preact.data, c_prev.data)

    def back_c(gc):
        dpre_ifg, dc_prev = kernels.cell_backward_c(gc, gates, c_prev.data)
        dpre = np.concatenate([dpre_ifg, np.zeros((m, u), dtype=gc.dtype)], axis=1)
        return dpre, dc_prev

    c = Tensor(c_d, _parents=(preact, c_prev), _backward=back_c)

    def back_h(gh):
        dpre_o, dc = kernels.cell_backward_h(gh, gates, tanh_c)
        dpre = np.concatenate([np.zeros((m, 3 * u), dtype=gh.dtype), dpre_o], axis=1)
        return dpre, dc

    h = Tensor(h_d, _parents=(preact, c), _backward=back_h)
    return h, c
