"""Distribution-free calibration of coverage radii from prediction errors.

Per-axis split-conformal quantiles of absolute errors, composed into a joint
confidence level, with mixing-aware subsampling of temporally correlated
series.  The subsampling interval is a user choice; an autocorrelation
report helps pick it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class ErrorSeries:
    """Timestamped 3-axis prediction errors."""

    timestamps: np.ndarray
    errors: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if self.timestamps.ndim != 1 or self.timestamps.size < 1:
            raise ValueError("need at least one timestamped sample")
        if np.any(np.diff(self.timestamps) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        if self.errors.shape != (self.timestamps.size, 3):
            raise ValueError("errors must have shape (len(timestamps), 3)")

    def __len__(self) -> int:
        return self.timestamps.size


@dataclass
class CoverageBounds:
    """Calibrated per-axis radii with joint confidence gamma."""

    epsilon: np.ndarray
    gamma: float
    per_axis_gamma: float
    n_effective: int


def subsample(series: ErrorSeries, k: int) -> ErrorSeries:
    """Keep every k-th sample starting at index 0."""
    if k < 1:
        raise ValueError("subsampling interval must be >= 1")
    return ErrorSeries(series.timestamps[::k].copy(), series.errors[::k].copy())


def per_axis_level(gamma: float) -> float:
    """Per-axis confidence whose three-fold product recovers gamma."""
    return gamma ** (1.0 / 3.0)


def _conformal_rank(n: int, per_axis: float) -> int:
    # finite-sample corrected order-statistic rank
    return math.ceil((n + 1) * per_axis)


def min_samples_for(gamma: float) -> int:
    """Smallest calibration size for which the conformal rank exists."""
    per_axis = per_axis_level(gamma)
    n = max(10, math.ceil(per_axis / (1.0 - per_axis)))
    while _conformal_rank(n, per_axis) > n:
        n += 1
    return n


def conformal_thresholds(series: ErrorSeries, gamma: float) -> CoverageBounds:
    """Split-conformal per-axis radii for joint confidence gamma.

    Scores are the absolute errors per axis; each radius is the k-th
    smallest score with k = ceil((N+1) * gamma^(1/3)).  Raises when the
    series is too short for the requested confidence, naming the minimum
    usable size.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    n = len(series)
    if n < 10:
        raise ValueError(f"need at least 10 calibration samples, got {n}")
    per_axis = per_axis_level(gamma)
    k = _conformal_rank(n, per_axis)
    if k > n:
        raise ValueError(
            f"insufficient calibration data: gamma={gamma} needs at least "
            f"{min_samples_for(gamma)} samples, got {n}"
        )
    scores = np.sort(np.abs(series.errors), axis=0, kind="stable")
    return CoverageBounds(
        epsilon=scores[k - 1].copy(),
        gamma=gamma,
        per_axis_gamma=per_axis,
        n_effective=n,
    )


def empirical_coverage(
    series: ErrorSeries, bounds: CoverageBounds
) -> tuple[float, np.ndarray]:
    """Fraction of samples inside the radii, jointly and per axis."""
    inside = np.abs(series.errors) <= bounds.epsilon
    return float(inside.all(axis=1).mean()), inside.mean(axis=0)


def decorrelation_lags(
    series: ErrorSeries, threshold: float = 0.05, max_lag: int | None = None
) -> np.ndarray:
    """Per-axis lag at which |autocorrelation| first drops below threshold.

    Guidance for picking the subsampling interval; returns max_lag + 1 for
    an axis that never decorrelates within the horizon.
    """
    n = len(series)
    if max_lag is None:
        max_lag = min(n - 2, 1000)
    lags = np.empty(3, dtype=int)
    for j in range(3):
        x = series.errors[:, j] - series.errors[:, j].mean()
        denom = float(x @ x)
        if denom == 0.0:
            lags[j] = 1
            continue
        lags[j] = max_lag + 1
        for lag in range(1, max_lag + 1):
            r = float(x[:-lag] @ x[lag:]) / denom
            if abs(r) < threshold:
                lags[j] = lag
                break
    return lags
