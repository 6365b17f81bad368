"""Fit-then-validate protocol for constants that exist but are not quantified."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["FittedBound", "fit_upper", "fit_two_sided", "split_halves"]


@dataclass(frozen=True)
class FittedBound:
    """A constant fitted on a calibration sample and checked on a fresh one.

    For one-sided fits ``K`` bounds ``values <= K``; for two-sided fits the
    values must lie in ``[1/K, K]``.  ``worst`` is the extreme validation
    value measured on the same scale as ``K``.
    """

    K: float
    worst: float
    headroom: float
    n_calibration: int
    n_validation: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.K) and self.worst <= self.headroom * self.K)

    def to_dict(self) -> dict:
        return {
            "K": self.K,
            "worst": self.worst,
            "headroom": self.headroom,
            "passed": self.passed,
            "n_calibration": self.n_calibration,
            "n_validation": self.n_validation,
        }


def split_halves(n: int) -> tuple[slice, slice]:
    half = n // 2
    return slice(0, half), slice(half, n)


def fit_upper(values, headroom: float = 1.25) -> FittedBound:
    """``K = max`` over the first half; validate the second half against ``headroom * K``."""
    values = np.asarray(values, dtype=float).ravel()
    cal, val = split_halves(values.size)
    K = float(np.max(values[cal]))
    worst = float(np.max(values[val]))
    return FittedBound(K, worst, headroom, cal.stop, values.size - cal.stop)


def fit_two_sided(ratios, headroom: float = 1.25) -> FittedBound:
    """Fit ``K`` with ``ratios`` in ``[1/K, K]``, calibration then validation half."""
    ratios = np.asarray(ratios, dtype=float).ravel()
    if np.any(ratios <= 0) or not np.all(np.isfinite(ratios)):
        raise ValueError("ratios must be finite and positive")
    spread = np.maximum(ratios, 1.0 / ratios)
    return fit_upper(spread, headroom)
