"""The two training losses, each a single fused graph node."""

from __future__ import annotations

import numpy as np

from stepsmith.neural.tensor import Tensor

BCE_CLAMP = 1e-7


def bce_loss(pred: Tensor, target) -> Tensor:
    """Mean binary cross entropy over every element.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs, and
    the gradient is zero where the clamp is active.
    """
    t = np.asarray(target, dtype=pred.data.dtype)
    if t.shape != pred.data.shape:
        raise ValueError(f"target shape {t.shape} does not match predictions {pred.data.shape}")
    if np.any((t != 0) & (t != 1)):
        raise ValueError("bce targets must be 0 or 1")
    lo = pred.data.dtype.type(BCE_CLAMP)
    hi = pred.data.dtype.type(1.0 - BCE_CLAMP)
    p = np.clip(pred.data, lo, hi)
    value = np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p)))

    def back(g):
        inside = (pred.data > lo) & (pred.data < hi)
        dp = (p - t) / (p * (1.0 - p)) / p.size
        return (g * np.where(inside, dp, 0.0),)

    return Tensor(np.asarray(value), _parents=(pred,), _backward=back)


def softmax_ce_loss(logits: Tensor, target_index) -> Tensor:
    """Mean softmax cross entropy against integer class targets."""
    idx = np.asarray(target_index)
    z = logits.data
    if z.ndim != 2:
        raise ValueError(f"logits must be (batch, classes), got {z.shape}")
    b, k = z.shape
    if idx.shape != (b,) or not np.issubdtype(idx.dtype, np.integer):
        raise ValueError(f"targets must be {b} integers, got {idx.shape} {idx.dtype}")
    if np.any(idx < 0) or np.any(idx >= k):
        raise ValueError(f"target index outside [0, {k})")
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    value = -np.mean(logp[np.arange(b), idx])

    def back(g):
        soft = np.exp(logp)
        soft[np.arange(b), idx] -= 1.0
        return (g * soft / b,)

    return Tensor(np.asarray(value), _parents=(logits,), _backward=back)
