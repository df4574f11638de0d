"""Mixed-frequency panels on a monthly grid.

A :class:`Panel` holds every series on one contiguous monthly grid. Quarterly
series carry values only on quarter-final months (March, June, September,
December); everything else is ``NaN``. Panels are immutable: every operation
returns a new panel and the value arrays are flagged read-only.
"""
from __future__ import annotations

import csv
import datetime
import enum
import io
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import DataError, DomainError, ParseError, PlacementError, RangeError

VINTAGE_OFFSETS = (-2, -1, 0, 1, 2)


class Frequency(enum.Enum):
    MONTHLY = "monthly"
    QUARTERLY = "quarterly"

    @property
    def step(self) -> int:
        """Number of grid months between consecutive native observations."""
        return 1 if self is Frequency.MONTHLY else 3

    @classmethod
    def parse(cls, value) -> "Frequency":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"unknown frequency {value!r}; expected 'monthly' or 'quarterly'") from None


@dataclass(frozen=True)
class SeriesMeta:
    name: str
    frequency: Frequency = Frequency.MONTHLY
    publication_lag: int = 0

    def __post_init__(self):
        if self.publication_lag < 0:
            raise ValueError(f"{self.name}: publication lag must be >= 0")


# -- month and quarter arithmetic ------------------------------------------

def month_ordinal(ym) -> int:
    year, month = ym
    if not 1 <= month <= 12:
        raise ValueError(f"invalid month {month}")
    return year * 12 + month - 1


def from_ordinal(k: int) -> tuple[int, int]:
    return k // 12, k % 12 + 1


def add_months(ym, n: int) -> tuple[int, int]:
    return from_ordinal(month_ordinal(ym) + n)


def quarter_end(quarter) -> tuple[int, int]:
    """Final month of ``(year, q)``."""
    year, q = quarter
    if not 1 <= q <= 4:
        raise ValueError(f"invalid quarter {q}")
    return year, 3 * q


def quarter_of(ym) -> tuple[int, int]:
    year, month = ym
    return year, (month - 1) // 3 + 1


def add_quarters(quarter, n: int) -> tuple[int, int]:
    k = quarter[0] * 4 + quarter[1] - 1 + n
    return k // 4, k % 4 + 1


def parse_month(text: str) -> tuple[int, int]:
    """Parse ``YYYY-MM`` (a trailing ``-DD`` is accepted and ignored)."""
    parts = str(text).strip().split("-")
    try:
        ym = int(parts[0]), int(parts[1])
        month_ordinal(ym)
    except (ValueError, IndexError):
        raise ValueError(f"cannot parse month {text!r}; expected YYYY-MM") from None
    return ym


def parse_quarter(text: str) -> tuple[int, int]:
    """Parse ``2019Q2`` style quarter labels."""
    s = str(text).strip().upper()
    year, sep, q = s.partition("Q")
    if not sep:
        raise ValueError(f"cannot parse quarter {text!r}; expected YYYYQn")
    try:
        quarter = int(year), int(q)
        quarter_end(quarter)
    except ValueError:
        raise ValueError(f"cannot parse quarter {text!r}; expected YYYYQn") from None
    return quarter


def format_month(ym) -> str:
    return f"{ym[0]:04d}-{ym[1]:02d}"


def format_quarter(quarter) -> str:
    return f"{quarter[0]}Q{quarter[1]}"


def vintage_for_target(target_quarter, offset: int) -> tuple[int, int]:
    """Evaluation month for a target quarter seen ``offset`` months from its end.

    >>> vintage_for_target((2019, 2), -2)
    (2019, 4)
    """
    if offset not in VINTAGE_OFFSETS:
        raise ValueError(f"vintage offset must be one of {VINTAGE_OFFSETS}, got {offset}")
    return add_months(quarter_end(target_quarter), offset)


# -- the panel ---------------------------------------------------------------

def _frozen(values) -> np.ndarray:
    arr = np.array(values, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Panel:
    """Date-indexed mixed-frequency dataset.

    Parameters
    ----------
    start : (year, month)
        First month of the grid.
    series : mapping name -> 1-D array
        Values aligned to the grid; ``NaN`` marks missing.
    meta : mapping name -> SeriesMeta
    target_name : str
    filled : bool
        Set by the filling step. Filled panels have no missing cells, so the
        quarterly placement rule (raw data only) is not checked.
    """

    start: tuple[int, int]
    series: Mapping[str, np.ndarray]
    meta: Mapping[str, SeriesMeta]
    target_name: str
    filled: bool = False
    n_months: int = field(init=False)

    def __post_init__(self):
        month_ordinal(self.start)
        series = {name: _frozen(v) for name, v in self.series.items()}
        if not series:
            raise DataError("panel has no series")
        lengths = {len(v) for v in series.values()}
        if len(lengths) != 1:
            raise DataError("series lengths differ from the date grid")
        n = lengths.pop()
        if n < 1:
            raise DataError("empty date grid")
        missing_meta = [name for name in series if name not in self.meta]
        if missing_meta:
            raise DataError(f"no metadata for series {missing_meta}")
        if self.target_name not in series:
            raise DataError(f"target {self.target_name!r} is not a panel series")
        object.__setattr__(self, "series", series)
        object.__setattr__(self, "meta", {name: self.meta[name] for name in series})
        object.__setattr__(self, "n_months", n)
        first_month = self.start[1]
        for name, values in series.items():
            if not self.filled and self.meta[name].frequency is Frequency.QUARTERLY:
                # rows whose calendar month is not a multiple of three
                months = (np.arange(n) + first_month - 1) % 12 + 1
                bad = np.flatnonzero(~np.isnan(values) & (months % 3 != 0))
                if bad.size:
                    ym = self.date(int(bad[0]))
                    raise PlacementError(
                        f"quarterly series {name!r} has a value at {format_month(ym)}, "
                        "which is not a quarter-final month")

    # grid helpers
    @property
    def names(self) -> list[str]:
        return list(self.series)

    @property
    def end(self) -> tuple[int, int]:
        return self.date(self.n_months - 1)

    @property
    def dates(self) -> list[tuple[int, int]]:
        base = month_ordinal(self.start)
        return [from_ordinal(base + i) for i in range(self.n_months)]

    def date(self, row: int) -> tuple[int, int]:
        return from_ordinal(month_ordinal(self.start) + row)

    def row(self, ym) -> int:
        """Grid row of a month (may be negative or past the end)."""
        return month_ordinal(ym) - month_ordinal(self.start)

    def __len__(self) -> int:
        return self.n_months

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def matrix(self, names: Iterable[str] | None = None) -> np.ndarray:
        """Stack series into a (months, series) array."""
        names = self.names if names is None else list(names)
        return np.column_stack([self.series[n] for n in names])

    def quarter_rows(self) -> np.ndarray:
        """Indices of quarter-final months on the grid."""
        first = (self.start[1] - 1) % 3
        return np.arange(2 - first, self.n_months, 3)

    def replace(self, series=None, meta=None, target_name=None, start=None) -> "Panel":
        return Panel(start=self.start if start is None else start,
                     series=self.series if series is None else series,
                     meta=self.meta if meta is None else meta,
                     target_name=self.target_name if target_name is None else target_name,
                     filled=self.filled)

    def select(self, names: Iterable[str]) -> "Panel":
        """Keep only ``names`` (the target is always retained)."""
        keep = [n for n in self.names if n in set(names) or n == self.target_name]
        return self.replace(series={n: self.series[n] for n in keep},
                            meta={n: self.meta[n] for n in keep})

    def truncate(self, end) -> "Panel":
        """Drop rows after month ``end``."""
        last = self.row(end)
        if last < 0:
            raise RangeError(f"{format_month(end)} precedes the grid start {format_month(self.start)}")
        last = min(last, self.n_months - 1)
        return self.replace(series={n: v[:last + 1] for n, v in self.series.items()})

    def extend(self, end) -> "Panel":
        """Pad the grid with missing rows through month ``end``."""
        extra = self.row(end) - (self.n_months - 1)
        if extra <= 0:
            return self
        pad = np.full(extra, np.nan)
        return self.replace(series={n: np.concatenate([v, pad]) for n, v in self.series.items()})

    def equals(self, other: "Panel") -> bool:
        """Exact equality of grid, metadata and values (``NaN`` equal to ``NaN``)."""
        return (self.start == other.start and self.filled == other.filled and self.target_name == other.target_name
                and self.meta == other.meta and self.names == other.names
                and all(np.array_equal(self.series[n], other.series[n], equal_nan=True)
                        for n in self.names))

    def n_missing(self) -> int:
        return int(sum(np.isnan(v).sum() for v in self.series.values()))


# -- ingestion -----------------------------------------------------------------

def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, newline="", encoding="utf-8")
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8"), newline="")
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def load_csv(source, meta: Mapping[str, SeriesMeta] | None = None, date_column: str = "date",
             target_name: str | None = None) -> Panel:
    """Read a CSV into a :class:`Panel`.

    ``source`` may be a path, raw bytes, or a binary/text stream. Columns
    absent from ``meta`` are treated as monthly with no publication lag.
    ``target_name`` defaults to the last column.
    """
    meta = dict(meta or {})
    handle = _open_text(source)
    try:
        rows = list(csv.reader(handle))
    finally:
        if isinstance(source, (str, os.PathLike)):
            handle.close()
    if not rows:
        raise DataError("CSV is empty; a header row is required")
    header = [h.strip() for h in rows[0]]
    if date_column not in header:
        raise DataError(f"date column {date_column!r} not found in header")
    if len(set(header)) != len(header):
        raise DataError("duplicate column names in header")
    body = [r for r in rows[1:] if any(cell.strip() for cell in r)]
    if len(body) < 2:
        raise DataError("CSV needs at least 2 data rows")
    names = [h for h in header if h != date_column]
    unknown = [n for n in meta if n not in names]
    if unknown:
        raise DataError(f"series {unknown} configured but absent from the CSV")
    date_idx = header.index(date_column)
    col_idx = {n: header.index(n) for n in names}

    parsed = {}
    for line_no, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ParseError(f"row {line_no}: expected {len(header)} fields, got {len(r)}")
        text = r[date_idx].strip()
        try:
            d = datetime.date.fromisoformat(text)
        except ValueError:
            raise ParseError(f"row {line_no}: malformed date {text!r}; expected YYYY-MM-DD") from None
        key = month_ordinal((d.year, d.month))
        if key in parsed:
            raise DataError(f"row {line_no}: duplicate date {format_month(from_ordinal(key))}")
        vals = []
        for n in names:
            cell = r[col_idx[n]].strip()
            if cell == "":
                vals.append(math.nan)
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise ParseError(f"row {line_no}: column {n!r} value {cell!r} is not numeric") from None
        parsed[key] = vals

    lo, hi = min(parsed), max(parsed)
    grid = np.full((hi - lo + 1, len(names)), np.nan)
    for key, vals in parsed.items():
        grid[key - lo] = vals
    series = {n: grid[:, j] for j, n in enumerate(names)}
    full_meta = {n: meta.get(n, SeriesMeta(n)) for n in names}
    return Panel(start=from_ordinal(lo), series=series, meta=full_meta,
                 target_name=target_name if target_name is not None else names[-1])


def write_csv(panel: Panel, sink, date_column: str = "date") -> None:
    """Write a panel in the same CSV dialect :func:`load_csv` reads."""
    own = isinstance(sink, (str, os.PathLike))
    handle = open(sink, "w", newline="", encoding="utf-8") if own else sink
    try:
        w = csv.writer(handle, lineterminator="\n")
        w.writerow([date_column] + panel.names)
        mat = panel.matrix()
        for i, ym in enumerate(panel.dates):
            w.writerow([f"{format_month(ym)}-01"] + ["" if np.isnan(x) else repr(float(x)) for x in mat[i]])
    finally:
        if own:
            handle.close()


# -- transformations -----------------------------------------------------------

def growth_rate(panel: Panel) -> Panel:
    """Period-over-period percent change at each series' native frequency.

    The first native observation (and any observation whose predecessor is
    missing) becomes missing.
    """
    out = {}
    for name, x in panel.series.items():
        present = x[~np.isnan(x)]
        if (present <= 0).any():
            raise DomainError(f"series {name!r} has non-positive levels; growth rate undefined")
        step = panel.meta[name].frequency.step
        g = np.full_like(x, np.nan)
        g[step:] = x[step:] / x[:-step] - 1.0
        out[name] = g
    return panel.replace(series=out)


def vintage_view(panel: Panel, evaluation_date) -> Panel:
    """The panel as it would have looked at ``evaluation_date``.

    A series with publication lag ``L`` keeps only months up to
    ``evaluation_date - L``; later cells become missing.
    """
    eval_ord = month_ordinal(evaluation_date)
    start_ord = month_ordinal(panel.start)
    out = {}
    for name, x in panel.series.items():
        last_visible = eval_ord - panel.meta[name].publication_lag - start_ord
        y = np.array(x)
        if last_visible + 1 < len(y):
            y[max(last_visible + 1, 0):] = np.nan
        out[name] = y
    return panel.replace(series=out)


def visible_mask(panel: Panel, evaluation_date) -> np.ndarray:
    """Boolean (months, series) array of cells a vintage would keep."""
    eval_ord = month_ordinal(evaluation_date)
    rows = np.arange(panel.n_months) + month_ordinal(panel.start)
    lags = np.array([panel.meta[n].publication_lag for n in panel.names])
    return rows[:, None] <= (eval_ord - lags)[None, :]
