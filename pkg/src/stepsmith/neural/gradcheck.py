"""Finite-difference verification of reverse-mode gradients.

The checker reruns a caller-supplied loss closure with single entries
of the checked tensors nudged by +-h and compares the central
difference against the gradient from one backward pass. Everything
must already be float64; promote() converts a model's parameters in
place. Coordinates are subsampled (default 64 across all tensors) so
full models stay affordable.
"""

from __future__ import annotations

import numpy as np


def promote(tensors) -> None:
    """Cast tensors to float64 in place so the graph runs in doubles."""
    for t in tensors:
        t.data = np.asarray(t.data, dtype=np.float64)


def grad_check(loss_fn, tensors, h=1e-4, max_coords=64, seed=0) -> float:
    """Max relative error between analytic and numeric gradients.

    loss_fn must rebuild the forward pass from scratch on every call
    (and be deterministic across calls). Relative error uses
    |a - n| / max(|a|, |n|, 1e-4) so near-zero gradients are compared
    on an absolute scale.
    """
    tensors = list(tensors)
    for t in tensors:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check needs float64 tensors; call promote() first")
        t.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors
    ]
    for t in tensors:
        t.grad = None

    coords = [(ti, fi) for ti, t in enumerate(tensors) for fi in range(t.data.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max_coords:
        picked = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[i] for i in picked]

    worst = 0.0
    for ti, fi in coords:
        t = tensors[ti]
        original = t.data.flat[fi]
        t.data.flat[fi] = original + h
        up = float(loss_fn().data)
        t.data.flat[fi] = original - h
        down = float(loss_fn().data)
        t.data.flat[fi] = original
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[ti].flat[fi])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-4)
        worst = max(worst, rel)
    return worst
