"""Missing-value filling for mixed-frequency panels.

Two kinds of gaps are treated differently. Interior gaps (including the
in-between months of quarterly series and leading months before a series
starts) are filled with the series mean over the training window. The ragged
edge, the trailing run of missing months, is filled either with that same mean
or with recursive ARMA forecasts made at the series' native frequency.
"""
from __future__ import annotations

import enum
import functools
from dataclasses import dataclass

import numpy as np

from . import arma
from .errors import FillError, FitError
from .panel import Frequency, Panel, format_month

MIN_ARMA_HISTORY = 10


class EdgeMethod(enum.Enum):
    MEAN = "mean"
    ARMA = "arma"


@dataclass(frozen=True)
class FillMethod:
    edge: EdgeMethod = EdgeMethod.ARMA
    interior: str = "mean"

    def __post_init__(self):
        if self.interior != "mean":
            raise ValueError("only mean filling is supported for interior gaps")
        object.__setattr__(self, "edge", EdgeMethod(self.edge))


def split_missing(values) -> tuple[np.ndarray, np.ndarray]:
    """Indices of interior missing cells and of the trailing missing run.

    >>> split_missing([1.0, float("nan"), 3.0, float("nan"), float("nan")])
    (array([1]), array([3, 4]))
    """
    x = np.asarray(values, dtype=float)
    missing = np.isnan(x)
    present = np.flatnonzero(~missing)
    last = present[-1] if present.size else -1
    idx = np.arange(len(x))
    return idx[missing & (idx <= last)], idx[idx > last]


def fill_series(values, native_rows, train_rows: int, edge: EdgeMethod, name: str = "series") -> np.ndarray:
    """Fill one grid-aligned series.

    Parameters
    ----------
    values : 1-D array with ``NaN`` for missing
    native_rows : indices of the rows where the series can be observed
        (every row for monthly data, quarter-final rows for quarterly data)
    train_rows : number of leading rows that form the training window
    edge : how to fill the trailing missing run
    """
    x = np.array(values, dtype=float)
    train = x[:train_rows]
    train = train[~np.isnan(train)]
    if train.size == 0:
        raise FillError(f"series {name!r} has no observations in the training window")
    mean = float(train.mean())
    interior, trailing = split_missing(x)
    x[interior] = mean
    if trailing.size == 0:
        return x
    if edge is EdgeMethod.ARMA:
        native_rows = np.asarray(native_rows)
        edge_native = native_rows[native_rows >= trailing[0]]
        history = np.asarray(values, dtype=float)[native_rows[native_rows < trailing[0]]]
        history = history[~np.isnan(history)]
        if edge_native.size and history.size >= MIN_ARMA_HISTORY:
            fc = _edge_forecast(history.tobytes(), edge_native.size)
            if fc is not None:
                x[edge_native] = fc
    x[np.isnan(x)] = mean
    return x


@functools.lru_cache(maxsize=8192)
def _edge_forecast(history: bytes, steps: int):
    # Memoized on the exact history: backtests refill the same series prefix
    # for many vintages. Returns None when no ARMA model can be fitted.
    h = np.frombuffer(history, dtype=float)
    try:
        model = arma.auto_arma(h)
    except FitError:
        return None
    out = arma.forecast(model, h, steps)
    out.setflags(write=False)
    return out


def fill_panel(panel: Panel, method: FillMethod | EdgeMethod | str = EdgeMethod.ARMA,
               train_end=None) -> Panel:
    """Return a copy of ``panel`` with no missing cells.

    Means are computed only from rows at or before ``train_end`` (default:
    the whole grid) so test-period values never leak into interior fills.
    """
    if not isinstance(method, FillMethod):
        method = FillMethod(edge=EdgeMethod(method))
    train_rows = panel.n_months if train_end is None else panel.row(train_end) + 1
    if train_rows < 1:
        raise FillError(f"training end {format_month(train_end)} precedes the grid start")
    quarter_rows = panel.quarter_rows()
    all_rows = np.arange(panel.n_months)
    out = {}
    for name, values in panel.series.items():
        native = quarter_rows if panel.meta[name].frequency is Frequency.QUARTERLY else all_rows
        out[name] = fill_series(values, native, train_rows, method.edge, name)
    return Panel(start=panel.start, series=out, meta=panel.meta,
                 target_name=panel.target_name, filled=True)
