"""Difficulty planning: one fine rating per coarse level.

A generated simfile always carries five charts, Challenge down to
Beginner, with fine ratings d, d-1, ..., d-4. The anchor d comes from
`default_difficulty` unless the user pins it or supplies all five
ratings explicitly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from stepsmith.errors import DataError, UsageError

COARSE_ORDER = ("Challenge", "Hard", "Medium", "Easy", "Beginner")
MIN_DIFFICULTY = 5  # keeps Beginner at d-4 >= 1


@dataclass(frozen=True)
class DifficultyPlan:
    entries: tuple  # of (coarse: str, fine: int), Challenge first


def default_difficulty(bpm: float, length_minutes: float) -> int:
    """Anchor rating from tempo and song length.

    d = round(floor(bpm/10) - (4 - log2(L))) with L in minutes, clamped
    so the Beginner chart still gets a rating of at least 1. A 2 minute
    120 BPM song rates 9; quadrupling the length adds 2.
    """
    if bpm <= 0.0 or length_minutes <= 0.0:
        raise DataError("difficulty formula needs positive bpm and length")
    raw = round(math.floor(bpm / 10.0) - (4.0 - math.log2(length_minutes)))
    return max(MIN_DIFFICULTY, int(raw))


def plan_difficulties(d: int | None = None, overrides=None) -> DifficultyPlan:
    """Five (coarse, fine) pairs, either d..d-4 or the overrides verbatim."""
    if overrides:
        fines = tuple(int(v) for v in overrides)
        if len(fines) != 5:
            raise UsageError(f"difficulty overrides need 5 values, got {len(fines)}")
        if any(v < 1 for v in fines):
            raise UsageError("difficulty overrides must all be >= 1")
    else:
        if d is None:
            raise UsageError("difficulty plan needs an anchor or overrides")
        if d < MIN_DIFFICULTY:
            raise UsageError(f"anchor difficulty {d} < {MIN_DIFFICULTY}")
        fines = tuple(d - k for k in range(5))
    return DifficultyPlan(tuple(zip(COARSE_ORDER, fines)))
