"""Error metrics and the paired one-tailed t-test used in backtest reports."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc

from ..errors import DataError

STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"))


def _errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise DataError("error vector is empty")
    return e


def mae(errors) -> float:
    """Mean absolute error of prediction-minus-actual values."""
    return float(np.mean(np.abs(_errors(errors))))


def rmse(errors) -> float:
    """Root-mean-square error of prediction-minus-actual values."""
    e = np.abs(_errors(errors))
    scale = e.max()
    if scale == 0 or not np.isfinite(scale):
        return float(scale)
    # scaled so tiny errors do not underflow when squared
    return float(scale * np.sqrt(np.mean((e / scale) ** 2)))


def t_lower_tail(t: float, df: float) -> float:
    """P(T <= t) for Student's t via the regularized incomplete beta function."""
    if math.isinf(t):
        return 0.0 if t < 0 else 1.0
    tail = 0.5 * float(betainc(0.5 * df, 0.5, df / (df + t * t)))
    return tail if t < 0 else 1.0 - tail


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: int
    p: float
    note: str = ""

    def __iter__(self):
        return iter((self.t, self.df, self.p))


def t_test_one_tailed(errors_a, errors_b) -> TTestResult:
    """Paired t-test of H1: mean(a - b) < 0.

    Conventions for degenerate samples: if every difference is zero the
    result is ``t = 0, p = 0.5`` with a note; constant nonzero differences
    give ``t = -inf, p = 0`` (a better) or ``t = +inf, p = 1``.
    """
    a = np.asarray(errors_a, dtype=float).ravel()
    b = np.asarray(errors_b, dtype=float).ravel()
    if a.shape != b.shape:
        raise DataError("paired t-test needs samples of equal length")
    n = a.size
    if n < 2:
        raise DataError(f"paired t-test needs at least 2 pairs, got {n}")
    d = a - b
    df = n - 1
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, df, 0.5, "all differences are zero")
        t = -math.inf if mean < 0 else math.inf
        return TTestResult(t, df, t_lower_tail(t, df), "differences have zero variance")
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, df, t_lower_tail(t, df))


def stars(p) -> str:
    """Significance marker: * p<.05, ** p<.01, *** p<.001."""
    if p is None or not np.isfinite(p):
        return ""
    for level, mark in STAR_LEVELS:
        if p < level:
            return mark
    return ""
