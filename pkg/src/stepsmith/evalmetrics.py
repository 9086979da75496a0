"""Chart-level evaluation metrics for placement and selection.

Placement metrics treat a chart as one long binary vector (48 slots per
beat) and score thresholded probabilities against it. Selection metrics
compare predicted symbol indices row by row, with separate accuracies
for hold rows (any digit 2 in the target) and tap-only rows.

Metrics that can be undefined (PR-AUC without positives, hold accuracy
for a chart without holds) come back as None rather than zero, and the
difficulty report skips them, so a hold-free chart never drags a group
average down. Empty denominators inside precision/recall/F1 use the
zero convention instead, which keeps those always defined.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from stepsmith.errors import DataError
from stepsmith.simfile import COARSE_DIFFICULTIES, StepSymbol

BCE_CLAMP = 1e-7
_LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class PlacementEval:
    precision: float
    recall: float
    f1: float
    max_threshold: float
    max_precision: float
    max_recall: float
    max_f1: float
    pr_auc: float | None
    bce: float


@dataclass(frozen=True)
class SelectionEval:
    loss: float | None
    accuracy: float
    hold_accuracy: float | None
    step_accuracy: float | None


def _check_aligned(probs, targets):
    probs = np.asarray(probs, dtype=np.float64).ravel()
    targets = np.asarray(targets, dtype=np.float64).ravel()
    if probs.shape != targets.shape:
        raise DataError(
            f"{probs.size} probabilities vs {targets.size} targets"
        )
    return probs, targets


def _prf(tp: int, fp: int, fn: int):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def prf_at_threshold(probs, targets, threshold: float):
    """Precision, recall and F1 with predictions at ``prob >= threshold``."""
    probs, targets = _check_aligned(probs, targets)
    pred = probs >= threshold
    pos = targets > 0
    tp = int(np.count_nonzero(pred & pos))
    fp = int(np.count_nonzero(pred & ~pos))
    fn = int(np.count_nonzero(~pred & pos))
    return _prf(tp, fp, fn)


def max_f1_threshold(probs, targets):
    """Best-F1 threshold over all distinct probabilities plus 0.5.

    Returns (threshold, precision, recall, f1); ties in F1 go to the
    larger threshold, so the result is deterministic.
    """
    probs, targets = _check_aligned(probs, targets)
    if probs.size == 0:
        raise DataError("cannot sweep thresholds over an empty chart")
    best = None
    for theta in sorted(set(probs.tolist()) | {0.5}):
        p, r, f1 = prf_at_threshold(probs, targets, theta)
        key = (f1, theta)
        if best is None or key > best[0]:
            best = (key, (theta, p, r, f1))
    return best[1]


def pr_auc(probs, targets):
    """Trapezoidal area under the precision-recall curve.

    The curve is traced over distinct thresholds in descending order and
    anchored at recall 0 with the first precision value. Returns None
    when the chart has no positive slots (the curve is undefined).
    """
    probs, targets = _check_aligned(probs, targets)
    pos = targets > 0
    total_pos = int(np.count_nonzero(pos))
    if total_pos == 0:
        return None
    order = np.argsort(-probs, kind="stable")
    sorted_probs = probs[order]
    tp_cum = np.cumsum(pos[order])
    # last index of each run of equal probabilities = the full `>= theta` set
    is_last = np.r_[sorted_probs[1:] != sorted_probs[:-1], True]
    cut = np.flatnonzero(is_last)
    precisions = tp_cum[cut] / (cut + 1.0)
    recalls = tp_cum[cut] / total_pos
    recalls = np.r_[0.0, recalls]
    precisions = np.r_[precisions[0], precisions]
    return float(np.trapezoid(precisions, recalls))


def binary_cross_entropy(probs, targets):
    """Mean clamped BCE of probabilities against binary targets."""
    probs, targets = _check_aligned(probs, targets)
    p = np.clip(probs, BCE_CLAMP, 1.0 - BCE_CLAMP)
    return float(-np.mean(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)))


def evaluate_placement(probs, targets) -> PlacementEval:
    """All placement metrics for one chart's flattened slot vector."""
    precision, recall, f1 = prf_at_threshold(probs, targets, 0.5)
    theta, mp, mr, mf1 = max_f1_threshold(probs, targets)
    return PlacementEval(
        precision=precision,
        recall=recall,
        f1=f1,
        max_threshold=theta,
        max_precision=mp,
        max_recall=mr,
        max_f1=mf1,
        pr_auc=pr_auc(probs, targets),
        bce=binary_cross_entropy(probs, targets),
    )


def _as_symbol(value) -> StepSymbol:
    return value if isinstance(value, StepSymbol) else StepSymbol(int(value))


def selection_scores(predictions, targets, probs=None) -> SelectionEval:
    """Row-wise selection accuracy, split by target row type.

    ``predictions`` and ``targets`` are aligned sequences of symbol
    indices or StepSymbols. ``probs`` optionally carries the predicted
    (n, 256) distributions so the mean cross-entropy can be reported;
    without it the loss field is None.
    """
    pred = [_as_symbol(p) for p in predictions]
    targ = [_as_symbol(t) for t in targets]
    if len(pred) != len(targ):
        raise DataError(f"{len(pred)} predictions vs {len(targ)} targets")
    if not targ:
        raise DataError("cannot score an empty row sequence")

    hits = [p.index == t.index for p, t in zip(pred, targ)]
    hold_rows = [i for i, t in enumerate(targ) if 2 in t.digits]
    step_rows = [i for i, t in enumerate(targ) if set(t.digits) <= {0, 1}]

    def rate(rows):
        if not rows:
            return None
        return sum(hits[i] for i in rows) / len(rows)

    loss = None
    if probs is not None:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (len(targ), 256):
            raise DataError(
                f"probability table shape {probs.shape}, wanted ({len(targ)}, 256)"
            )
        picked = probs[np.arange(len(targ)), [t.index for t in targ]]
        loss = float(-np.mean(np.log(np.maximum(picked, _LOG_FLOOR))))

    return SelectionEval(
        loss=loss,
        accuracy=sum(hits) / len(hits),
        hold_accuracy=rate(hold_rows),
        step_accuracy=rate(step_rows),
    )


def difficulty_report(evals: dict, charts: dict, grouping: str) -> list:
    """Unweighted per-difficulty means of every metric.

    ``evals`` maps chart id to a PlacementEval or SelectionEval and
    ``charts`` maps the same ids to Chart objects carrying the
    difficulty labels. Returns (metric, difficulty, value) rows; None
    metrics are simply left out of their group's mean.
    """
    if grouping not in ("fine", "coarse"):
        raise DataError(f"unknown grouping {grouping!r}")
    buckets: dict = {}
    for chart_id, ev in evals.items():
        chart = charts[chart_id]
        difficulty = (
            chart.fine_difficulty if grouping == "fine" else chart.coarse_difficulty
        )
        for field in fields(ev):
            value = getattr(ev, field.name)
            if value is not None:
                buckets.setdefault((field.name, difficulty), []).append(value)

    def difficulty_order(d):
        return (COARSE_DIFFICULTIES.index(d),) if isinstance(d, str) else (d,)

    rows = [
        (metric, difficulty, sum(values) / len(values))
        for (metric, difficulty), values in buckets.items()
    ]
    rows.sort(key=lambda row: (row[0], difficulty_order(row[1])))
    return rows
