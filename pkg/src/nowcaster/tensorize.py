"""Standardized (observations, timesteps, features) batches from filled panels.

Each observation is one target quarter: the ``T`` monthly rows ending at the
quarter's final month. When the target series is itself an input feature it
enters lagged by one quarter (three rows), so an observation never sees the
value it is asked to predict.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DataError, RangeError
from .panel import Frequency, Panel, format_month, format_quarter, quarter_end

TARGET_FEATURE_SHIFT = 3


@dataclass(frozen=True, eq=False)
class ScalerStats:
    feature_names: tuple
    feature_mean: np.ndarray
    feature_sd: np.ndarray
    target_name: str
    target_mean: float
    target_sd: float
    fit_start: tuple
    fit_end: tuple

    def standardize_target(self, y):
        return (np.asarray(y, dtype=float) - self.target_mean) / self.target_sd


@dataclass(frozen=True, eq=False)
class Batch:
    inputs: np.ndarray
    targets: np.ndarray | None
    quarters: tuple
    feature_names: tuple

    def __post_init__(self):
        if self.inputs.ndim != 3 or min(self.inputs.shape) < 1:
            raise DataError(f"batch inputs must be a non-empty 3-D array, got shape {self.inputs.shape}")
        if not np.isfinite(self.inputs).all():
            raise DataError("batch inputs contain missing or non-finite values")
        if self.targets is not None and len(self.targets) != self.inputs.shape[0]:
            raise DataError("targets are not aligned with observations")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, index) -> "Batch":
        index = np.asarray(index)
        return Batch(self.inputs[index], None if self.targets is None else self.targets[index],
                     tuple(self.quarters[i] for i in index), self.feature_names)


def _safe_sd(values) -> tuple[float, float]:
    mean = float(np.mean(values))
    sd = float(np.std(values))
    # constant columns get unit scale
    if sd <= 1e-12 * max(1.0, abs(mean)):
        sd = 1.0
    return mean, sd


def target_rows(panel: Panel) -> np.ndarray:
    if panel.meta[panel.target_name].frequency is Frequency.QUARTERLY:
        return panel.quarter_rows()
    return np.arange(panel.n_months)


def fit_scaler(panel: Panel, train_end, feature_names: Sequence[str] | None = None) -> ScalerStats:
    """Z-score statistics (population convention) from rows up to ``train_end``."""
    names = tuple(panel.names if feature_names is None else feature_names)
    if panel.n_missing():
        raise DataError("fit_scaler needs a filled panel")
    n_train = min(panel.row(train_end) + 1, panel.n_months)
    if n_train < 1:
        raise DataError(f"training window ending {format_month(train_end)} is empty")
    means, sds = [], []
    for name in names:
        m, s = _safe_sd(panel[name][:n_train])
        means.append(m)
        sds.append(s)
    rows = target_rows(panel)
    rows = rows[rows < n_train]
    if rows.size == 0:
        raise DataError("no target observations in the training window")
    t_mean, t_sd = _safe_sd(panel[panel.target_name][rows])
    return ScalerStats(names, np.array(means), np.array(sds), panel.target_name, t_mean, t_sd,
                       panel.start, panel.date(n_train - 1))


def standardized_matrix(panel: Panel, scaler: ScalerStats) -> np.ndarray:
    """(months, features) standardized inputs, with the target feature lagged."""
    missing = [n for n in scaler.feature_names if n not in panel.series]
    if missing:
        raise DataError(f"panel lacks features {missing}")
    z = (panel.matrix(scaler.feature_names) - scaler.feature_mean) / scaler.feature_sd
    if scaler.target_name in scaler.feature_names:
        j = scaler.feature_names.index(scaler.target_name)
        col = np.zeros(panel.n_months)
        col[TARGET_FEATURE_SHIFT:] = z[:-TARGET_FEATURE_SHIFT, j]
        z[:, j] = col
    return z


def make_batch(panel: Panel, scaler: ScalerStats, n_timesteps: int, for_quarters,
               with_targets: bool = True) -> Batch:
    """Window the standardized panel into one observation per quarter.

    Months before the grid start are padded with zeros (the standardized mean).
    """
    if n_timesteps < 1:
        raise ValueError("n_timesteps must be >= 1")
    if panel.n_missing():
        raise DataError("make_batch needs a filled panel")
    quarters = tuple(tuple(q) for q in for_quarters)
    if not quarters:
        raise DataError("no quarters requested")
    z = standardized_matrix(panel, scaler)
    n_feat = z.shape[1]
    padded = np.vstack([np.zeros((n_timesteps - 1, n_feat)), z])
    inputs = np.empty((len(quarters), n_timesteps, n_feat))
    targets = np.empty(len(quarters)) if with_targets else None
    target = panel[panel.target_name]
    for k, q in enumerate(quarters):
        r = panel.row(quarter_end(q))
        if r >= panel.n_months or r < 0:
            raise RangeError(f"quarter {format_quarter(q)} lies outside the grid "
                             f"{format_month(panel.start)}..{format_month(panel.end)}")
        inputs[k] = padded[r:r + n_timesteps]
        if with_targets:
            targets[k] = (target[r] - scaler.target_mean) / scaler.target_sd
    return Batch(inputs, targets, quarters, scaler.feature_names)


def unscale_predictions(scaler: ScalerStats, standardized) -> np.ndarray:
    """Map standardized predictions back to target units."""
    return np.asarray(standardized, dtype=float) * scaler.target_sd + scaler.target_mean
