"""Pseudo real-time backtests over data vintages.

For every test quarter and vintage offset the panel is cut back to what was
published at the evaluation month (``vintage_view``), filled, and handed to
each model. Models are trained once on the fully revised data up to
``train_end``; only the inputs change from vintage to vintage.

Randomness: ensemble member ``k`` uses seed ``base_seed + k``. In the
feature-sampling experiment, run ``r`` draws its feature subset from
``default_rng([seed, r])`` and trains its ensemble with
``base_seed = seed + r * n_networks``, so no two runs share a member seed.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import arma, dfm, ensemble
from ..errors import DataError, NowcastError
from ..fill import EdgeMethod, fill_panel
from ..lstm import LstmHyperparams
from ..panel import (VINTAGE_OFFSETS, Frequency, Panel, format_month, format_quarter,
                     month_ordinal, quarter_end, quarter_of, vintage_for_target, vintage_view,
                     visible_mask)
from ..tensorize import fit_scaler, make_batch

log = logging.getLogger(__name__)

MODEL_ORDER = ("arma", "lstm", "dfm", "naive")
_POISON = 1.0e6


@dataclass(frozen=True)
class BacktestSetup:
    train_end: tuple
    test_quarters: tuple
    offsets: tuple = VINTAGE_OFFSETS
    hyperparams: LstmHyperparams = field(default_factory=LstmHyperparams)
    n_networks: int = 10
    seed: int = 0
    fill_edge: EdgeMethod = EdgeMethod.ARMA
    models: tuple = MODEL_ORDER
    dfm_max_iter: int = 500
    dfm_tol: float = 1e-6
    audit: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "train_end", tuple(self.train_end))
        quarters = tuple(tuple(q) for q in self.test_quarters)
        if not quarters:
            raise ValueError("no test quarters given")
        if len(set(quarters)) != len(quarters):
            raise ValueError("test quarters repeat")
        for q in quarters:
            if month_ordinal(quarter_end(q)) <= month_ordinal(self.train_end):
                raise ValueError(f"test quarter {format_quarter(q)} is not after the training "
                                 f"window ending {format_month(self.train_end)}")
        object.__setattr__(self, "test_quarters", quarters)
        offsets = tuple(int(o) for o in self.offsets)
        if not offsets or any(o not in VINTAGE_OFFSETS for o in offsets) or len(set(offsets)) != len(offsets):
            raise ValueError(f"offsets must be distinct values from {VINTAGE_OFFSETS}")
        object.__setattr__(self, "offsets", offsets)
        unknown = set(self.models) - set(MODEL_ORDER)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")
        object.__setattr__(self, "models", tuple(m for m in MODEL_ORDER if m in self.models))
        object.__setattr__(self, "fill_edge", EdgeMethod(self.fill_edge))
        if self.n_networks < 1:
            raise ValueError("n_networks must be >= 1")


@dataclass(frozen=True, eq=False)
class Vintage:
    """One (quarter, offset) view: the raw vintage and its filled copy."""
    quarter: tuple
    offset: int
    evaluation_date: tuple
    raw: Panel
    filled: Panel


@dataclass(frozen=True)
class AuditRecord:
    quarter: tuple
    offset: int
    masked_cells: int
    violations: tuple = ()


@dataclass(frozen=True)
class Failure:
    model: str
    offset: int | None
    quarter: tuple | None
    message: str


class VintageCache:
    """Memo of filled vintages and feature-independent benchmark results.

    A cache is tied to one panel, training end and fill method; it can be
    shared by every run of a feature-sampling experiment.
    """

    def __init__(self, panel: Panel, train_end, fill_edge: EdgeMethod):
        self.panel = panel
        self.train_end = tuple(train_end)
        self.fill_edge = EdgeMethod(fill_edge)
        self._vintages = {}
        self._audits = {}
        self._arma = {}

    def compatible(self, panel, setup: BacktestSetup) -> bool:
        return panel is self.panel and setup.train_end == self.train_end and setup.fill_edge is self.fill_edge

    def vintage(self, quarter, offset) -> Vintage:
        key = (tuple(quarter), offset)
        if key not in self._vintages:
            self._vintages[key] = build_vintage(self.panel, quarter, offset, self.train_end, self.fill_edge)
        return self._vintages[key]

    def audit(self, quarter, offset) -> AuditRecord:
        key = (tuple(quarter), offset)
        if key not in self._audits:
            self._audits[key] = audit_vintage(self.panel, self.vintage(quarter, offset), self.train_end,
                                              self.fill_edge)
        return self._audits[key]

    def arma_benchmark(self, quarter, offset) -> float:
        key = (tuple(quarter), offset)
        if key not in self._arma:
            self._arma[key] = arma_benchmark(self.vintage(quarter, offset).raw, quarter)
        return self._arma[key]


def build_vintage(panel: Panel, quarter, offset: int, train_end, fill_edge=EdgeMethod.ARMA) -> Vintage:
    """Vintage of ``panel`` for a target quarter, on a grid reaching the quarter's end."""
    ev = vintage_for_target(quarter, offset)
    end = max(ev, quarter_end(quarter), key=month_ordinal)
    raw = vintage_view(panel, ev)
    raw = raw.truncate(end) if month_ordinal(raw.end) > month_ordinal(end) else raw.extend(end)
    filled = fill_panel(raw, fill_edge, train_end)
    return Vintage(tuple(quarter), offset, ev, raw, filled)


def audit_vintage(panel: Panel, vintage: Vintage, train_end, fill_edge) -> AuditRecord:
    """Rebuild a vintage from a panel whose masked cells hold poison values.

    Any difference from the clean vintage means a masked cell reached the
    model inputs.
    """
    visible = visible_mask(panel, vintage.evaluation_date)
    poisoned = {}
    n_masked = 0
    for j, name in enumerate(panel.names):
        x = np.array(panel[name])
        hidden = ~visible[:, j] & ~np.isnan(x)
        n_masked += int(hidden.sum())
        x[hidden] = _POISON + np.arange(hidden.sum())
        poisoned[name] = x
    dirty = build_vintage(panel.replace(series=poisoned), vintage.quarter, vintage.offset, train_end, fill_edge)
    violations = []
    for label, clean_p, dirty_p in (("raw", vintage.raw, dirty.raw), ("filled", vintage.filled, dirty.filled)):
        for name in clean_p.names:
            if not np.array_equal(clean_p[name], dirty_p[name], equal_nan=True):
                violations.append(f"{label}:{name}")
    return AuditRecord(vintage.quarter, vintage.offset, n_masked, tuple(violations))


def target_history(raw: Panel, quarter) -> tuple[np.ndarray, int]:
    """Visible target values strictly before ``quarter`` and the forecast horizon."""
    target = raw[raw.target_name]
    rows = raw.quarter_rows() if raw.meta[raw.target_name].frequency is Frequency.QUARTERLY \
        else np.arange(raw.n_months)
    rows = rows[rows < raw.row(quarter_end(quarter))]
    values = target[rows]
    seen = np.flatnonzero(~np.isnan(values))
    if seen.size == 0:
        raise DataError(f"no visible target history before {format_quarter(quarter)}")
    last = rows[seen[-1]]
    last_q = quarter_of(raw.date(last))
    horizon = (quarter[0] - last_q[0]) * 4 + quarter[1] - last_q[1]
    history = values[:seen[-1] + 1]
    return history[~np.isnan(history)], horizon


def arma_benchmark(raw: Panel, quarter) -> float:
    """AIC-selected ARMA forecast of the target from its own vintage history."""
    history, horizon = target_history(raw, quarter)
    model = arma.auto_arma(history)
    return float(arma.forecast(model, history, horizon)[-1])


def training_quarters(panel: Panel, train_end) -> list:
    """Quarters whose target value is observed on or before ``train_end``."""
    target = panel[panel.target_name]
    rows = panel.quarter_rows()
    rows = rows[(rows <= panel.row(train_end)) & ~np.isnan(target[rows])]
    return [quarter_of(panel.date(r)) for r in rows]


@dataclass(eq=False)
class TrainedModels:
    feature_names: tuple
    ensemble: object = None
    dfm: object = None
    naive: float = float("nan")
    failures: list = field(default_factory=list)


def train_models(panel: Panel, setup: BacktestSetup, feature_names, base_seed: int) -> TrainedModels:
    """Fit the requested models once on the training window."""
    train_panel = panel.truncate(setup.train_end)
    out = TrainedModels(tuple(feature_names))
    target = train_panel[train_panel.target_name]
    out.naive = float(np.nanmean(target[train_panel.quarter_rows()]))
    if "lstm" in setup.models:
        try:
            filled = fill_panel(train_panel, setup.fill_edge, setup.train_end)
            scaler = fit_scaler(filled, setup.train_end, feature_names)
            batch = make_batch(filled, scaler, setup.hyperparams.n_timesteps,
                               training_quarters(train_panel, setup.train_end))
            out.ensemble = ensemble.train_ensemble(batch, setup.hyperparams, setup.n_networks, base_seed,
                                                   scaler, setup.train_end, n_jobs=setup.n_jobs)
        except NowcastError as exc:
            out.failures.append(Failure("lstm", None, None, f"training failed: {exc}"))
    if "dfm" in setup.models:
        try:
            out.dfm = dfm.fit_dfm(train_panel, setup.train_end, feature_names,
                                  max_iter=setup.dfm_max_iter, tol=setup.dfm_tol)
        except NowcastError as exc:
            out.failures.append(Failure("dfm", None, None, f"training failed: {exc}"))
    return out


@dataclass(eq=False)
class BacktestResult:
    setup: BacktestSetup
    feature_names: tuple
    quarters: tuple
    actuals: np.ndarray
    predictions: dict  # model -> (n_offsets, n_quarters), NaN where the model failed
    failures: list
    audits: list
    base_seed: int = 0

    @property
    def models(self) -> tuple:
        return tuple(m for m in MODEL_ORDER if m in self.predictions)

    @property
    def offsets(self) -> tuple:
        return self.setup.offsets

    @property
    def audit_violations(self) -> int:
        return sum(len(a.violations) for a in self.audits)

    def errors(self, model: str, offset: int) -> np.ndarray:
        """Prediction minus actual for the quarters where ``model`` succeeded."""
        e = self.predictions[model][self.offsets.index(offset)] - self.actuals
        return e[np.isfinite(e)]

    def n_failed(self, model: str, offset: int | None = None) -> int:
        p = self.predictions[model]
        if offset is not None:
            p = p[self.offsets.index(offset)]
        return int(np.isnan(p).sum())


def actual_values(panel: Panel, quarters) -> np.ndarray:
    target = panel[panel.target_name]
    out = np.empty(len(quarters))
    for k, q in enumerate(quarters):
        r = panel.row(quarter_end(q))
        if not 0 <= r < panel.n_months or np.isnan(target[r]):
            raise DataError(f"no actual target value for test quarter {format_quarter(q)}")
        out[k] = target[r]
    return out


def backtest(panel: Panel, setup: BacktestSetup, feature_names=None, base_seed: int | None = None,
             cache: VintageCache | None = None, models: TrainedModels | None = None) -> BacktestResult:
    """Evaluate each requested model on every (offset, test quarter) vintage.

    ``feature_names`` defaults to every series, the target included (it enters
    the LSTM lagged one quarter; the DFM never uses it). A model failing on
    a vintage leaves ``NaN`` in its cell and a :class:`Failure` record.
    """
    if feature_names is None:
        feature_names = panel.names
    feature_names = tuple(feature_names)
    unknown = [n for n in feature_names if n not in panel.series]
    if unknown:
        raise DataError(f"unknown features {unknown}")
    base_seed = setup.seed if base_seed is None else int(base_seed)
    if cache is None or not cache.compatible(panel, setup):
        cache = VintageCache(panel, setup.train_end, setup.fill_edge)
    quarters = setup.test_quarters
    actuals = actual_values(panel, quarters)
    if models is None:
        models = train_models(panel, setup, feature_names, base_seed)
    failures = list(models.failures)
    shape = (len(setup.offsets), len(quarters))
    preds = {m: np.full(shape, np.nan) for m in setup.models}
    audits = []
    for i, offset in enumerate(setup.offsets):
        for k, q in enumerate(quarters):
            try:
                vin = cache.vintage(q, offset)
            except NowcastError as exc:
                for m in setup.models:
                    failures.append(Failure(m, offset, q, f"vintage construction failed: {exc}"))
                continue
            if setup.audit:
                audits.append(cache.audit(q, offset))
            for m in setup.models:
                try:
                    preds[m][i, k] = _predict_one(m, models, vin, cache, setup)
                except NowcastError as exc:
                    failures.append(Failure(m, offset, q, str(exc)))
                except _Unavailable:
                    pass
    return BacktestResult(setup, feature_names, quarters, actuals, preds, failures, audits, base_seed)


class _Unavailable(Exception):
    """Model was not trained; its failure is already recorded."""


def _predict_one(model: str, trained: TrainedModels, vin: Vintage, cache: VintageCache, setup) -> float:
    if model == "arma":
        return cache.arma_benchmark(vin.quarter, vin.offset)
    if model == "naive":
        return trained.naive
    if model == "lstm":
        if trained.ensemble is None:
            raise _Unavailable
        batch = make_batch(vin.filled, trained.ensemble.scaler, setup.hyperparams.n_timesteps,
                           [vin.quarter], with_targets=False)
        return float(ensemble.predict_ensemble(trained.ensemble, batch)[0])
    if model == "dfm":
        if trained.dfm is None:
            raise _Unavailable
        return dfm.nowcast(trained.dfm, vin.raw, vin.quarter)
    raise ValueError(model)


# -- feature-sampling experiment ---------------------------------------------------

@dataclass(eq=False)
class ExperimentRun:
    run: int
    features: tuple
    base_seed: int
    result: BacktestResult | None
    excluded: str = ""


@dataclass(eq=False)
class ExperimentResult:
    setup: BacktestSetup
    runs: list
    benchmarks: BacktestResult | None
    seed: int
    pool: tuple

    @property
    def valid_runs(self) -> list:
        return [r for r in self.runs if not r.excluded]

    @property
    def audit_violations(self) -> int:
        total = sum(r.result.audit_violations for r in self.runs if r.result is not None)
        if self.benchmarks is not None:
            total += self.benchmarks.audit_violations
        return total


def sample_features(pool, n_runs: int, min_f: int, max_f: int, seed: int) -> list:
    """Feature subsets for each run, in pool order."""
    pool = tuple(pool)
    if not 1 <= min_f <= max_f:
        raise ValueError("need 1 <= min_features <= max_features")
    if len(pool) < max_f:
        raise ValueError(f"feature pool has {len(pool)} series, fewer than max_features={max_f}")
    out = []
    for r in range(n_runs):
        rng = np.random.default_rng([seed, r])
        size = int(rng.integers(min_f, max_f + 1))
        idx = np.sort(rng.choice(len(pool), size, replace=False))
        out.append(tuple(pool[i] for i in idx))
    return out


def feature_sampling_experiment(panel: Panel, setup: BacktestSetup, pool=None, n_runs: int = 100,
                                min_f: int = 5, max_f: int = 20, seed: int | None = None,
                                cache: VintageCache | None = None, progress=None) -> ExperimentResult:
    """Repeat the backtest on random feature subsets.

    Each run fits the LSTM ensemble and the DFM on the same sampled features.
    The feature-independent benchmarks (ARMA, naive) are evaluated once.
    Runs in which either model failed anywhere are kept in the output but
    excluded from ratios and tests.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    seed = setup.seed if seed is None else int(seed)
    pool = tuple(n for n in (pool or panel.names) if n != panel.target_name)
    subsets = sample_features(pool, n_runs, min_f, max_f, seed)
    if cache is None or not cache.compatible(panel, setup):
        cache = VintageCache(panel, setup.train_end, setup.fill_edge)
    paired = tuple(m for m in ("lstm", "dfm") if m in setup.models)
    bench_models = tuple(m for m in ("arma", "naive") if m in setup.models)
    benchmarks = None
    if bench_models:
        benchmarks = backtest(panel, replace(setup, models=bench_models), (), seed, cache)
    runs = []
    for r, features in enumerate(subsets):
        base_seed = seed + r * setup.n_networks
        result = backtest(panel, replace(setup, models=paired), features, base_seed, cache) if paired else None
        excluded = ""
        if result is not None and result.failures:
            excluded = f"{len(result.failures)} failure(s): {result.failures[0].message}"
        runs.append(ExperimentRun(r, features, base_seed, result, excluded))
        if progress is not None:
            progress(r, runs[-1])
        log.info("run %d: %d features%s", r, len(features), f" (excluded: {excluded})" if excluded else "")
    return ExperimentResult(setup, runs, benchmarks, seed, pool)
