"""Convergence studies: Richardson extrapolation and log-log slope fits."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .exceptions import ConfigError


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    stderr: float
    intercept: float

    def within(self, target, tol):
        return abs(self.slope - target) <= tol


def fit_loglog(x, y) -> SlopeFit:
    """Least-squares slope of ``log y`` against ``log x``.

    Needs at least two points with positive ``y``; ``stderr`` is NaN when
    only two points are given.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise ConfigError("slope fit needs two or more (x, y) pairs of equal length")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ConfigError("slope fit needs strictly positive values")
    res = stats.linregress(np.log(x), np.log(y))
    err = float(res.stderr) if x.size > 2 else float("nan")
    return SlopeFit(float(res.slope), err, float(res.intercept))


def richardson(values, order=2, ratio=2):
    """Romberg table over refinement levels; returns the most extrapolated entry.

    ``values[i]`` is computed with step ``h / ratio**i`` and has an error
    expansion in powers ``h^order, h^(2 order), ...``.  Entries may be
    arrays of equal shape.
    """
    R = [np.asarray(v, dtype=float) for v in values]
    if not R:
        raise ConfigError("richardson needs at least one level")
    for k in range(1, len(R)):
        f = float(ratio) ** (order * k)
        R = [(f * R[i + 1] - R[i]) / (f - 1) for i in range(len(R) - 1)]
    return R[0]


def observed_order(errors, ratio=2):
    """Per-level convergence orders ``log(e_i / e_{i+1}) / log(ratio)``."""
    e = np.asarray(errors, dtype=float)
    return np.log(e[:-1] / e[1:]) / np.log(ratio)
