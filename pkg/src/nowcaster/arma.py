"""Univariate ARMA(p, q) estimation by conditional sum of squares.

Used twice in the pipeline: to extrapolate ragged edges during filling and as
the autoregressive benchmark in backtests. The model is

    x_t = c + sum_i ar[i] x_{t-1-i} + e_t + sum_j ma[j] e_{t-1-j}

with pre-sample residuals set to zero and the first ``p`` observations used
only as conditioning values.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_toeplitz

from . import kernels
from .errors import FitError

SIGMA2_FLOOR = 1e-12
MAX_ORDER = 2
_N_RESTARTS = 2
_RESTART_SCALE = 0.1
_ROOT_MARGIN = 1e-6
_XATOL = 1e-7
_FATOL_REL = 1e-11


@dataclass(frozen=True, eq=False)
class ArmaModel:
    p: int
    q: int
    ar: np.ndarray
    ma: np.ndarray
    intercept: float
    sigma2: float
    n_fit: int
    css: float = field(default=float("nan"))

    @property
    def mean(self) -> float:
        """Unconditional mean ``c / (1 - sum(ar))``."""
        return self.intercept / (1.0 - float(np.sum(self.ar)))


def _fix_roots(roots):
    mod = np.abs(roots)
    outer = 1.0 / (1.0 - _ROOT_MARGIN)
    near = (mod >= 1.0 - _ROOT_MARGIN) & (mod <= outer)
    fixed = np.where(mod > outer, roots / np.maximum(mod, 1e-300) ** 2, roots)
    return np.where(near, roots / np.maximum(mod, 1e-300) * (1.0 - 10 * _ROOT_MARGIN), fixed)


def make_stationary(ar) -> np.ndarray:
    """Map AR coefficients into the stationary region.

    Works with the roots of ``z^p - ar[0] z^(p-1) - ... - ar[p-1]``: roots
    outside the unit circle are reflected to ``1/conj(z)`` and roots within
    ``1e-6`` of the circle are pulled inside.
    """
    ar = np.asarray(ar, dtype=float)
    if ar.size == 0 or _clearly_stationary(ar):
        return ar
    roots = np.roots(np.concatenate(([1.0], -ar)))
    if (np.abs(roots) < 1.0 - _ROOT_MARGIN).all():
        return ar
    return -np.real(np.poly(_fix_roots(roots)))[1:]


def _clearly_stationary(ar) -> bool:
    # closed-form triangle conditions for p <= 2, shrunk by the root margin
    lim = 1.0 - 4 * _ROOT_MARGIN
    if ar.size == 1:
        return abs(ar[0]) < lim
    if ar.size == 2:
        a1, a2 = ar
        return abs(a2) < lim and a1 + a2 < lim and a2 - a1 < lim
    return False


def make_invertible(ma) -> np.ndarray:
    """Reflect MA roots so that ``1 + ma[0] B + ...`` is invertible."""
    ma = np.asarray(ma, dtype=float)
    return -make_stationary(-ma)


def residuals(x, intercept, ar, ma) -> np.ndarray:
    """One-step residuals; entries before ``len(ar)`` are zero by convention."""
    return kernels.arma_residuals(np.ascontiguousarray(x, dtype=float), float(intercept),
                                  np.ascontiguousarray(ar, dtype=float),
                                  np.ascontiguousarray(ma, dtype=float))


def css(x, intercept, ar, ma) -> float:
    """Conditional sum of squared residuals over ``t >= p``."""
    e = residuals(x, intercept, ar, ma)
    return float(e[len(ar):] @ e[len(ar):])


def _yule_walker(x, p):
    if p == 0:
        return np.zeros(0)
    xc = x - x.mean()
    n = len(x)
    acov = np.array([xc[:n - k] @ xc[k:] / n for k in range(p + 1)])
    if acov[0] <= 0:
        return np.zeros(p)
    return make_stationary(solve_toeplitz(acov[:p], acov[1:]))


def _ols_ar(x, p):
    n = len(x)
    design = np.column_stack([np.ones(n - p)] + [x[p - k - 1:n - k - 1] for k in range(p)])
    coef, *_ = np.linalg.lstsq(design, x[p:], rcond=None)
    intercept, ar = coef[0], coef[1:]
    stationary = make_stationary(ar)
    if not np.array_equal(stationary, ar):
        ar = stationary
        fitted = sum(ar[k] * x[p - k - 1:n - k - 1] for k in range(p))
        intercept = float(np.mean(x[p:] - fitted))
    return float(intercept), ar


def fit_arma(history, p: int, q: int) -> ArmaModel:
    """Estimate an ARMA(p, q) by minimizing the conditional sum of squares.

    ``q == 0`` is ordinary least squares on lagged values; otherwise a
    Nelder-Mead search starts from Yule-Walker AR values and zero MA terms and
    is restarted twice from perturbations of the best point. AR roots are
    reflected into the stationary region inside the objective and at the end;
    MA roots are reflected the same way so the residual recursion stays stable.
    """
    x = np.asarray(history, dtype=float)
    if p < 0 or q < 0:
        raise ValueError("ARMA orders must be non-negative")
    if np.isnan(x).any():
        raise ValueError("history contains missing values; strip them before fitting")
    n = len(x)
    if n < 10 + p + q:
        raise FitError(f"ARMA({p},{q}) needs at least {10 + p + q} observations, got {n}")
    if np.ptp(x) == 0.0:
        return ArmaModel(0, 0, np.zeros(0), np.zeros(0), float(x[0]), SIGMA2_FLOOR, n, 0.0)

    if q == 0:
        intercept, ar = _ols_ar(x, p)
        ma = np.zeros(0)
    else:
        ar0 = _yule_walker(x, p)
        start = np.concatenate(([x.mean() * (1.0 - ar0.sum())], ar0, np.zeros(q)))

        minimizer = kernels.arma_css_minimize
        if p > 2 or q > 2:
            minimizer = kernels.python_backend.arma_css_minimize
        best = start
        best_val = css(x, start[0], ar0, np.zeros(q))
        rng = np.random.default_rng(0)
        scale = np.concatenate(([x.std()], np.ones(p + q))) * _RESTART_SCALE
        point = start
        for attempt in range(_N_RESTARTS + 1):
            theta, value, _ = minimizer(x, p, q, point, 400 * (p + q + 1), _XATOL, _FATOL_REL * best_val)
            if value < best_val:
                best, best_val = theta, value
            point = best + rng.normal(size=best.size) * scale
        intercept = float(best[0])
        ar = make_stationary(best[1:1 + p])
        ma = make_invertible(best[1 + p:])

    value = css(x, intercept, ar, ma)
    sigma2 = max(value / (n - p), SIGMA2_FLOOR)
    return ArmaModel(p, q, np.asarray(ar, dtype=float), np.asarray(ma, dtype=float),
                     intercept, sigma2, n, value)


def aic(model: ArmaModel, history, skip: int = MAX_ORDER) -> float:
    """``n ln(CSS/n) + 2(p+q+1)`` over a window shared by every candidate order."""
    x = np.asarray(history, dtype=float)
    e = residuals(x, model.intercept, model.ar, model.ma)[skip:]
    n = len(e)
    return n * np.log(max(float(e @ e) / n, 1e-300)) + 2 * (model.p + model.q + 1)


def select_order(history, max_p: int = MAX_ORDER, max_q: int = MAX_ORDER) -> tuple[int, int]:
    """Pick (p, q) on the grid ``0..max_p x 0..max_q`` by AIC.

    Ties go to the smaller ``p + q``, then the smaller ``p``; if no order can
    be fitted the answer is ``(0, 0)``.
    """
    x = np.asarray(history, dtype=float)
    if len(x) and np.ptp(x) == 0.0:
        return 0, 0
    scored = []
    for p in range(max_p + 1):
        for q in range(max_q + 1):
            try:
                model = fit_arma(x, p, q)
            except FitError:
                continue
            scored.append((aic(model, x, skip=max_p), p + q, p, q))
    if not scored:
        return 0, 0
    _, _, p, q = min(scored)
    return p, q


def auto_arma(history) -> ArmaModel:
    """``select_order`` followed by ``fit_arma`` at the chosen order."""
    p, q = select_order(history)
    return fit_arma(history, p, q)


def forecast(model: ArmaModel, history, horizon: int) -> np.ndarray:
    """Recursive multi-step forecasts; future shocks are set to zero."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if model.p == 0 and model.q == 0:
        return np.full(horizon, float(model.intercept))
    x = np.asarray(history, dtype=float)
    if len(x) == 0 or len(x) < model.p:
        raise ValueError(f"history of length {len(x)} too short for ARMA({model.p},{model.q})")
    e = residuals(x, model.intercept, model.ar, model.ma)
    xs = list(x)
    es = list(e)
    out = np.empty(horizon)
    for h in range(horizon):
        value = model.intercept
        for k in range(model.p):
            value += model.ar[k] * xs[-1 - k]
        for k in range(model.q):
            if len(es) - 1 - k >= 0:
                value += model.ma[k] * es[-1 - k]
        out[h] = value
        xs.append(value)
        es.append(0.0)
    return out
