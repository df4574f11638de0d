"""Single-factor dynamic factor model baseline.

State space (monthly, features standardized)::

    y_t = Lambda f_t + e_t,      e_t ~ N(0, diag(R))
    f_t = a f_{t-1} + u_t,       u_t ~ N(0, Q)

Missing observations simply drop out of the update step, so ragged edges and
quarterly series (observed only in quarter-final months) need no filling.
Parameters are estimated by EM starting from a principal-component factor;
the factor innovation variance is normalized to one.
The quarterly target is linked to the model afterwards by a bridge regression
on the quarter-mean smoothed factor; the target itself is not a factor input.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DataError, FitError, NumericalError, RangeError
from .panel import Frequency, Panel, format_quarter, month_ordinal, quarter_end

MIN_OBSERVATIONS = 10
_MIN_VAR = 1e-12
_MAX_AR = 0.999


@dataclass(frozen=True, eq=False)
class DfmModel:
    loadings: np.ndarray
    obs_var: np.ndarray
    ar: float
    state_var: float
    init_mean: float = 0.0
    init_var: float = 1.0
    feature_names: tuple = ()
    feature_mean: np.ndarray | None = None
    feature_sd: np.ndarray | None = None
    target_name: str | None = None
    bridge_intercept: float = float("nan")
    bridge_slope: float = float("nan")
    loglik_trace: tuple = ()
    n_iter: int = 0
    converged: bool = False

    def __post_init__(self):
        if not (np.asarray(self.obs_var) > 0).all():
            raise NumericalError("idiosyncratic variances must be positive")
        if not self.state_var > 0:
            raise NumericalError("factor innovation variance must be positive")
        if not abs(self.ar) < 1:
            raise NumericalError("factor AR coefficient must satisfy |a| < 1")

    @property
    def n_features(self) -> int:
        return len(self.loadings)

    @property
    def factor_variance(self) -> float:
        """Stationary variance Q / (1 - a^2) of the factor."""
        return self.state_var / (1.0 - self.ar ** 2)

    def unit_factor_loadings(self) -> np.ndarray:
        """Loadings on a unit-variance factor, in the features' original units."""
        sd = np.ones(self.n_features) if self.feature_sd is None else self.feature_sd
        return self.loadings * np.sqrt(self.factor_variance) * sd

    def with_params(self, **changes) -> "DfmModel":
        values = {k: getattr(self, k) for k in self.__dataclass_fields__}
        values.update(changes)
        return DfmModel(**values)


@dataclass(frozen=True, eq=False)
class KalmanOutput:
    m_pred: np.ndarray
    p_pred: np.ndarray
    m_filt: np.ndarray
    p_filt: np.ndarray
    m_smooth: np.ndarray
    p_smooth: np.ndarray
    lag1_cov: np.ndarray  # Cov(f_t, f_{t-1} | all data); entry 0 unused
    loglik_terms: np.ndarray = field(repr=False)

    @property
    def loglik(self) -> float:
        return float(self.loglik_terms.sum())


def kalman_smooth(model: DfmModel, y) -> KalmanOutput:
    """Filter and smooth the factor given a (months, features) matrix with NaNs."""
    y = np.ascontiguousarray(y, dtype=float)
    if y.ndim != 2 or y.shape[1] != model.n_features:
        raise DataError(f"expected observations of shape (T, {model.n_features}), got {y.shape}")
    if np.isnan(y).all():
        raise DataError("no observations to filter")
    status, m_pred, p_pred, m_filt, p_filt, ll = kernels.kalman_filter(
        y, model.loadings, model.obs_var, model.ar, model.state_var, model.init_mean, model.init_var)
    if status == kernels.KALMAN_BAD_PRIOR:
        raise NumericalError("non-positive predicted factor variance")
    if status != kernels.KALMAN_OK:
        raise NumericalError("non-positive idiosyncratic variance")
    m_s, p_s, gain = kernels.rts_smoother(m_pred, p_pred, m_filt, p_filt, model.ar)
    lag1 = np.zeros(len(m_s))
    lag1[1:] = gain[:-1] * p_s[1:]
    return KalmanOutput(m_pred, p_pred, m_filt, p_filt, m_s, p_s, lag1, ll)


def _standardize(y):
    mean = np.nanmean(y, axis=0)
    sd = np.nanstd(y, axis=0)
    sd = np.where(sd > 1e-12 * np.maximum(1.0, np.abs(mean)), sd, 1.0)
    return (y - mean) / sd, mean, sd


def _initial_model(z) -> DfmModel:
    """First principal component of the mean-filled data, then regressions on it.

    The factor is scaled to unit innovation variance; Q stays at 1 throughout
    EM because the scale of a single factor is not identified otherwise.
    """
    filled = np.where(np.isnan(z), 0.0, z)
    u, s, _ = np.linalg.svd(filled, full_matrices=False)
    f = u[:, 0] * s[0]
    f = f - f.mean()
    a = float(np.clip((f[1:] @ f[:-1]) / (f[:-1] @ f[:-1]), -0.95, 0.95))
    innov = np.sqrt(np.mean((f[1:] - a * f[:-1]) ** 2))
    f = f / (innov if innov > 0 else 1.0)
    observed = ~np.isnan(z)
    lam = np.empty(z.shape[1])
    r = np.empty(z.shape[1])
    for j in range(z.shape[1]):
        obs = observed[:, j]
        fj, yj = f[obs], z[obs, j]
        lam[j] = (fj @ yj) / (fj @ fj)
        r[j] = max(np.mean((yj - lam[j] * fj) ** 2), 1e-4)
    return DfmModel(lam, r, a, 1.0, 0.0, 1.0 / (1.0 - a * a))


def _m_step(model: DfmModel, z, observed, ks: KalmanOutput) -> DfmModel:
    ef2 = ks.m_smooth ** 2 + ks.p_smooth
    lam = np.empty(model.n_features)
    r = np.empty(model.n_features)
    for j in range(model.n_features):
        obs = observed[:, j]
        yj, m, p = z[obs, j], ks.m_smooth[obs], ks.p_smooth[obs]
        lam[j] = (yj @ m) / ef2[obs].sum()
        r[j] = max(np.mean((yj - lam[j] * m) ** 2 + lam[j] ** 2 * p), _MIN_VAR)
    cross = (ks.m_smooth[1:] * ks.m_smooth[:-1] + ks.lag1_cov[1:]).sum()
    a = float(np.clip(cross / ef2[:-1].sum(), -_MAX_AR, _MAX_AR))
    # Q and the prior for f_0 stay fixed, so every iteration is an exact EM step
    return model.with_params(loadings=lam, obs_var=r, ar=a)


def fit_em(y, max_iter: int = 500, tol: float = 1e-6, feature_names=None) -> DfmModel:
    """Estimate the factor model on a (months, features) matrix with NaNs.

    Series with fewer than ``MIN_OBSERVATIONS`` values are rejected. Iterations
    stop once the log-likelihood gain falls below ``tol`` or after
    ``max_iter`` steps; ``loglik_trace[k]`` is the log-likelihood of the
    parameters entering iteration ``k``.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 2:
        raise DataError("fit_em expects a 2-D array")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(y.shape[1]))
    counts = (~np.isnan(y)).sum(axis=0)
    usable = counts >= MIN_OBSERVATIONS
    if usable.sum() < 2:
        raise FitError(f"a factor model needs at least 2 series with {MIN_OBSERVATIONS}+ observations, "
                       f"got {int(usable.sum())}")
    y = y[:, usable]
    names = tuple(n for n, u in zip(names, usable) if u)
    z, mean, sd = _standardize(y)
    observed = ~np.isnan(z)
    model = _initial_model(z)
    trace = []
    converged = False
    for _ in range(max_iter):
        ks = kalman_smooth(model, z)
        trace.append(ks.loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol:
            converged = True
            break
        model = _m_step(model, z, observed, ks)
    else:
        trace.append(kalman_smooth(model, z).loglik)
    return model.with_params(feature_names=names, feature_mean=mean, feature_sd=sd,
                             loglik_trace=tuple(trace), n_iter=len(trace) - 1, converged=converged)


def _features(model: DfmModel, panel: Panel, n_rows: int | None = None) -> np.ndarray:
    missing = [n for n in model.feature_names if n not in panel.series]
    if missing:
        raise DataError(f"panel lacks factor-model features {missing}")
    y = (panel.matrix(model.feature_names) - model.feature_mean) / model.feature_sd
    if n_rows is not None and n_rows > len(y):
        y = np.vstack([y, np.full((n_rows - len(y), y.shape[1]), np.nan)])
    return y


def smoothed_factor(model: DfmModel, panel: Panel, through=None) -> np.ndarray:
    """Smoothed factor means on the panel grid, extended with NaN rows to ``through``."""
    n_rows = None if through is None else panel.row(through) + 1
    return kalman_smooth(model, _features(model, panel, n_rows)).m_smooth


def _quarter_means(factor, start, quarters):
    out = np.empty(len(quarters))
    for k, q in enumerate(quarters):
        r = month_ordinal(quarter_end(q)) - month_ordinal(start)
        if r - 2 < 0 or r >= len(factor):
            raise RangeError(f"quarter {format_quarter(q)} is not covered by the factor")
        out[k] = factor[r - 2:r + 1].mean()
    return out


def fit_dfm(panel: Panel, train_end, feature_names=None, max_iter: int = 500, tol: float = 1e-6) -> DfmModel:
    """Fit the factor on features up to ``train_end`` and bridge it to the target."""
    if panel.meta[panel.target_name].frequency is not Frequency.QUARTERLY:
        raise DataError("the bridge regression expects a quarterly target")
    names = [n for n in (feature_names or panel.names) if n != panel.target_name]
    train = panel.truncate(train_end) if panel.end > tuple(train_end) else panel
    model = fit_em(train.matrix(names), max_iter=max_iter, tol=tol, feature_names=names)
    model = model.with_params(target_name=panel.target_name)
    factor = smoothed_factor(model, train)
    rows = train.quarter_rows()
    rows = rows[rows >= 2]
    target = train[panel.target_name][rows]
    keep = ~np.isnan(target)
    if keep.sum() < 2:
        raise FitError("the bridge regression needs at least 2 observed target quarters")
    fq = np.array([factor[r - 2:r + 1].mean() for r in rows[keep]])
    design = np.column_stack([np.ones(keep.sum()), fq])
    beta, *_ = np.linalg.lstsq(design, target[keep], rcond=None)
    return model.with_params(bridge_intercept=float(beta[0]), bridge_slope=float(beta[1]))


def nowcast_many(model: DfmModel, panel: Panel, quarters) -> np.ndarray:
    """Bridge-regression nowcasts for several quarters from one (vintage) panel.

    Months past the end of the panel are treated as missing, so a quarter
    beyond the grid gets a pure factor forecast.
    """
    quarters = [tuple(q) for q in quarters]
    last = max(quarter_end(q) for q in quarters)
    through = last if last > panel.end else None
    factor = smoothed_factor(model, panel, through)
    return model.bridge_intercept + model.bridge_slope * _quarter_means(factor, panel.start, quarters)


def nowcast(model: DfmModel, panel: Panel, quarter) -> float:
    """Nowcast of the target for ``quarter`` given a vintage panel."""
    return float(nowcast_many(model, panel, [quarter])[0])


__all__ = ["DfmModel", "KalmanOutput", "kalman_smooth", "fit_em", "fit_dfm", "smoothed_factor",
           "nowcast", "nowcast_many"]
