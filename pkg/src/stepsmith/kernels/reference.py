"""Pure-numpy implementations of the recurrent hot loops.

These are the fallback for stepsmith.kernels when the compiled extension is
not available. Both backends implement the same five functions with the same
semantics; the autodiff layer never needs to know which one it got.

Conventions:
  * conv patches use a fixed 3x3 neighbourhood with zero ("same") padding,
    taps ordered row-major over (dy, dx) in {-1, 0, 1}^2;
  * fused cell math uses gate order (input, forget, cell, output) along the
    last axis of the pre-activation array.
"""

import numpy as np


def im2col3x3(x):
    """Gather 3x3 neighbourhoods of ``x`` (N, H, W, C) into (N, H, W, 9*C)."""
    n, h, w, c = x.shape
    out = np.zeros((n, h, w, 9 * c), dtype=x.dtype)
    for tap, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        out[:, ys0:ys1, xs0:xs1, tap * c : (tap + 1) * c] = x[
            :, ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx, :
        ]
    return out


def col2im3x3(cols, channels):
    """Adjoint of im2col3x3: scatter-add (N, H, W, 9*C) back to (N, H, W, C)."""
    n, h, w, _ = cols.shape
    c = channels
    out = np.zeros((n, h, w, c), dtype=cols.dtype)
    for tap, (dy, dx) in enumerate((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1)):
        ys0, ys1 = max(0, -dy), min(h, h - dy)
        xs0, xs1 = max(0, -dx), min(w, w - dx)
        if ys0 >= ys1 or xs0 >= xs1:
            continue
        out[:, ys0 + dy : ys1 + dy, xs0 + dx : xs1 + dx, :] += cols[
            :, ys0:ys1, xs0:xs1, tap * c : (tap + 1) * c
        ]
    return out


def cell_forward(preact, c_prev):
    """Fused LSTM-style cell update.

    preact: (M, 4U) gate pre-activations, c_prev: (M, U).
    Returns (h, c, gates, tanh_c) where gates holds the activated
    (i, f, g, o) values needed by the backward passes.
    """
    u = c_prev.shape[-1]
    gates = np.empty_like(preact)
    gates[:, : 2 * u] = _sigmoid(preact[:, : 2 * u])
    gates[:, 2 * u : 3 * u] = np.tanh(preact[:, 2 * u : 3 * u])
    gates[:, 3 * u :] = _sigmoid(preact[:, 3 * u :])
    i = gates[:, :u]
    f = gates[:, u : 2 * u]
    g = gates[:, 2 * u : 3 * u]
    o = gates[:, 3 * u :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, gates, tanh_c


def cell_backward_h(dh, gates, tanh_c):
    """Gradient of h = o * tanh(c) w.r.t. the o pre-activation and c.

    Returns (dpre_o, dc) with shapes (M, U) each.
    """
    u = tanh_c.shape[-1]
    o = gates[:, 3 * u :]
    dpre_o = dh * tanh_c * o * (1.0 - o)
    dc = dh * o * (1.0 - tanh_c * tanh_c)
    return dpre_o, dc


def cell_backward_c(dc, gates, c_prev):
    """Gradient of c = f*c_prev + i*g w.r.t. (i, f, g) pre-activations and c_prev.

    Returns (dpre_ifg, dc_prev) with shapes (M, 3U) and (M, U).
    """
    u = c_prev.shape[-1]
    i = gates[:, :u]
    f = gates[:, u : 2 * u]
    g = gates[:, 2 * u : 3 * u]
    dpre_ifg = np.empty((dc.shape[0], 3 * u), dtype=dc.dtype)
    dpre_ifg[:, :u] = dc * g * i * (1.0 - i)
    dpre_ifg[:, u : 2 * u] = dc * c_prev * f * (1.0 - f)
    dpre_ifg[:, 2 * u :] = dc * i * (1.0 - g * g)
    dc_prev = dc * f
    return dpre_ifg, dc_prev


def _sigmoid(x):
    # Split by sign so exp never overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out
