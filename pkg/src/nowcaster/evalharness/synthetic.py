"""Synthetic mixed-frequency panels with a known single-factor structure.

Monthly factor ``f_t`` follows a unit-variance AR(1). Feature ``j`` is
``lambda_j f_t`` plus Gaussian noise; a quarterly feature is the quarter mean
of that monthly signal, recorded in the quarter's final month. The quarterly
target is ``target_mean + target_loading * mean(f over the quarter)`` plus
noise. Values are on a growth-rate scale already, so no transform is needed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..panel import Frequency, Panel, SeriesMeta, quarter_end

MONTHLY_LAGS = (0, 1, 2)


@dataclass(frozen=True)
class SyntheticSpec:
    n_months: int = 192
    n_features: int = 20
    factor_ar: float = 0.8
    loading_low: float = 0.5
    loading_high: float = 1.5
    noise_scale: float = 0.5
    target_noise_scale: float = 0.2
    target_mean: float = 0.5
    target_loading: float = 1.0
    quarterly_fraction: float = 0.2
    publication_lags: tuple | None = None
    target_lag: int = 2
    start: tuple = (2004, 1)
    seed: int = 0
    target_name: str = "target"

    def __post_init__(self):
        if self.n_months < 6:
            raise ValueError("n_months must be >= 6")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if not abs(self.factor_ar) < 1:
            raise ValueError("factor_ar must satisfy |a| < 1")
        for name in ("noise_scale", "target_noise_scale", "loading_low", "loading_high"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.loading_high < self.loading_low:
            raise ValueError("loading_high must be >= loading_low")
        if not 0.0 <= self.quarterly_fraction <= 1.0:
            raise ValueError("quarterly_fraction must lie in [0, 1]")
        if self.publication_lags is not None and len(self.publication_lags) != self.n_features:
            raise ValueError("publication_lags needs one entry per feature")
        if self.target_lag < 0 or (self.publication_lags and min(self.publication_lags) < 0):
            raise ValueError("publication lags must be >= 0")
        object.__setattr__(self, "start", tuple(self.start))

    @property
    def feature_names(self) -> tuple:
        width = len(str(self.n_features))
        return tuple(f"x{j + 1:0{width}d}" for j in range(self.n_features))


@dataclass(frozen=True, eq=False)
class SyntheticData:
    panel: Panel
    factor: np.ndarray
    loadings: np.ndarray
    quarterly: tuple
    spec: SyntheticSpec

    def truth(self, quarter) -> float:
        """Noise-free target value for a quarter."""
        r = self.panel.row(quarter_end(quarter))
        return self.spec.target_mean + self.spec.target_loading * float(self.factor[r - 2:r + 1].mean())


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    n, a = spec.n_months, spec.factor_ar
    shocks = rng.standard_normal(n)
    f = np.empty(n)
    f[0] = shocks[0]
    scale = np.sqrt(1.0 - a * a)
    for t in range(1, n):
        f[t] = a * f[t - 1] + scale * shocks[t]
    loadings = rng.uniform(spec.loading_low, spec.loading_high, spec.n_features)
    noise = rng.standard_normal((n, spec.n_features)) * spec.noise_scale
    n_quarterly = int(round(spec.quarterly_fraction * spec.n_features))
    quarterly = np.zeros(spec.n_features, dtype=bool)
    quarterly[rng.choice(spec.n_features, n_quarterly, replace=False)] = True
    if spec.publication_lags is None:
        lags = rng.choice(MONTHLY_LAGS, spec.n_features)
        lags[quarterly] = 1
    else:
        lags = np.asarray(spec.publication_lags, dtype=int)

    first_month = spec.start[1]
    # rows ending a full quarter inside the grid
    month_of = (np.arange(n) + first_month - 1) % 12 + 1
    q_end = np.flatnonzero(month_of % 3 == 0)
    q_end = q_end[q_end >= 2]

    series, meta = {}, {}
    for j, name in enumerate(spec.feature_names):
        x = loadings[j] * f + noise[:, j]
        if quarterly[j]:
            q = np.full(n, np.nan)
            for r in q_end:
                q[r] = x[r - 2:r + 1].mean()
            x = q
        series[name] = x
        meta[name] = SeriesMeta(name, Frequency.QUARTERLY if quarterly[j] else Frequency.MONTHLY, int(lags[j]))
    target = np.full(n, np.nan)
    target_noise = rng.standard_normal(len(q_end)) * spec.target_noise_scale
    for k, r in enumerate(q_end):
        target[r] = spec.target_mean + spec.target_loading * f[r - 2:r + 1].mean() + target_noise[k]
    series[spec.target_name] = target
    meta[spec.target_name] = SeriesMeta(spec.target_name, Frequency.QUARTERLY, spec.target_lag)
    panel = Panel(start=spec.start, series=series, meta=meta, target_name=spec.target_name)
    names = tuple(n_ for n_, q in zip(spec.feature_names, quarterly) if q)
    return SyntheticData(panel, f, loadings, names, spec)
