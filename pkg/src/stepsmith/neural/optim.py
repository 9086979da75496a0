"""Adam and the two schedule rules used by the training loops.

Both schedule helpers are pure functions of the metric history rather
than stateful objects: given the same epoch-ordered list they always
return the same answer, which makes resumed and replayed runs agree by
construction.
"""

from __future__ import annotations

import numpy as np

from stepsmith.errors import NumericError


class Adam:
    """Bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _improved(value: float, best: float, mode: str) -> bool:
    if mode == "minimize":
        return value < best
    if mode == "maximize":
        return value > best
    raise ValueError(f"mode must be 'minimize' or 'maximize', got {mode!r}")


def reduce_on_plateau(history, factor=0.5, patience=5, mode="minimize") -> float:
    """Learning-rate multiplier implied by a metric history.

    Each run of `patience` consecutive epochs without a new best
    multiplies the rate by `factor` and restarts the count, so six flat
    epochs halve the rate exactly once.
    """
    multiplier = 1.0
    best = None
    wait = 0
    for value in history:
        if best is None or _improved(value, best, mode):
            best = value
            wait = 0
        else:
            wait += 1
            if wait >= patience:
                multiplier *= factor
                wait = 0
    return multiplier


def early_stop(history, warmup=100, patience=20, mode="maximize") -> bool:
    """True when `patience` post-warmup epochs have passed without a new
    post-warmup best.

    The first post-warmup epoch sets the baseline, so on a flat history
    the decision flips exactly at warmup + patience + 1 evaluations.
    """
    if len(history) <= warmup:
        return False
    post = history[warmup:]
    best = post[0]
    wait = 0
    for value in post[1:]:
        if _improved(value, best, mode):
            best = value
            wait = 0
        else:
            wait += 1
    return wait >= patience
