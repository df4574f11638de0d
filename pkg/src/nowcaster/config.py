"""Run configuration: a YAML document with one mapping per section.

Example::

    data:
      csv_path: panel.csv          # relative paths resolve against the config file
      date_column: date
      target: gdp
      features: [ip, retail]       # optional; default is every column, target included
      series:
        gdp: {frequency: quarterly, lag: 2}
        ip: {frequency: monthly, lag: 1}
    transform: {growth_rates: false}
    fill: {edge_method: arma}
    model: {n_timesteps: 12, hidden_size: 20, n_layers: 2, epochs: 200,
            batch_size: 30, learning_rate: 0.01, n_networks: 10, seed: 0}
    baselines: {dfm: true, arma_benchmark: true, naive: true}
    backtest: {train_end: 2014-12, test_quarters: 2015Q1..2019Q4, offsets: [-2, -1, 0, 1, 2]}
    experiment: {n_runs: 0, min_features: 5, max_features: 20}
    predict: {as_of: 2019-06, quarters: [2019Q2]}
    synth: {seed: 0, n_months: 192, n_features: 20}
    output_dir: out

``--set section.key=value`` overrides are parsed as YAML scalars before
validation. Every validation failure raises :class:`ConfigError` naming the
offending key.
"""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field, fields

import yaml

from .errors import ConfigError
from .fill import EdgeMethod
from .lstm import LstmHyperparams
from .panel import (VINTAGE_OFFSETS, Frequency, SeriesMeta, add_quarters, format_month, month_ordinal,
                    parse_month, parse_quarter, quarter_end)


@dataclass(frozen=True)
class DataConfig:
    csv_path: str = ""
    date_column: str = "date"
    target: str = ""
    features: tuple | None = None
    series: dict = field(default_factory=dict)  # name -> SeriesMeta


@dataclass(frozen=True)
class TransformConfig:
    growth_rates: bool = False


@dataclass(frozen=True)
class FillConfig:
    edge_method: EdgeMethod = EdgeMethod.ARMA


@dataclass(frozen=True)
class ModelConfig:
    n_timesteps: int = 12
    hidden_size: int = 20
    n_layers: int = 2
    epochs: int = 200
    batch_size: int = 30
    learning_rate: float = 1e-2
    n_networks: int = 10
    seed: int = 0
    n_jobs: int = 1

    def hyperparams(self) -> LstmHyperparams:
        return LstmHyperparams(self.n_timesteps, self.hidden_size, self.n_layers, self.epochs,
                               self.batch_size, self.learning_rate, self.seed)


@dataclass(frozen=True)
class BaselinesConfig:
    dfm: bool = True
    arma_benchmark: bool = True
    naive: bool = True


@dataclass(frozen=True)
class BacktestConfig:
    train_end: tuple | None = None
    test_quarters: tuple = ()
    offsets: tuple = VINTAGE_OFFSETS
    audit: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    n_runs: int = 0
    min_features: int = 5
    max_features: int = 20


@dataclass(frozen=True)
class PredictConfig:
    as_of: tuple | None = None
    quarters: tuple = ()


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)
    fill: FillConfig = field(default_factory=FillConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    baselines: BaselinesConfig = field(default_factory=BaselinesConfig)
    backtest: BacktestConfig = field(default_factory=BacktestConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    predict: PredictConfig = field(default_factory=PredictConfig)
    synth: dict = field(default_factory=dict)
    output_dir: str = "output"


SECTIONS = {"data": DataConfig, "transform": TransformConfig, "fill": FillConfig, "model": ModelConfig,
            "baselines": BaselinesConfig, "backtest": BacktestConfig, "experiment": ExperimentConfig,
            "predict": PredictConfig}


# -- value coercion ----------------------------------------------------------------

def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{key} must be an integer, got {value!r}", key)
    if minimum is not None and value < minimum:
        raise ConfigError(f"{key} must be >= {minimum}, got {value}", key)
    return value


def _float(value, key):
    if isinstance(value, str):
        # YAML 1.1 reads "1e-3" (no dot) as a string
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{key} must be a number, got {value!r}", key)
    return float(value)


def _bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}", key)
    return value


def _str(value, key):
    if not isinstance(value, str) or not value:
        raise ConfigError(f"{key} must be a non-empty string, got {value!r}", key)
    return value


def _month(value, key):
    # YAML reads 2014-12 as a string but 2014-12-01 as a date
    text = value.strftime("%Y-%m") if hasattr(value, "strftime") else str(value)
    try:
        return parse_month(text)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", key) from None


def _quarter(value, key):
    try:
        return parse_quarter(value)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}", key) from None


def _quarters(value, key) -> tuple:
    """A list of quarters or a ``START..END`` range string."""
    if isinstance(value, str) and ".." in value:
        first, _, last = value.partition("..")
        a, b = _quarter(first, key), _quarter(last, key)
        n = (b[0] - a[0]) * 4 + b[1] - a[1]
        if n < 0:
            raise ConfigError(f"{key}: empty quarter range {value!r}", key)
        return tuple(add_quarters(a, k) for k in range(n + 1))
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{key} must be a list of quarters or a 'YYYYQn..YYYYQn' range", key)
    return tuple(_quarter(v, key) for v in value)


def _mapping(value, key) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(f"{key} must be a mapping", key)
    return value


def _check_keys(raw: dict, allowed, section: str | None):
    for k in raw:
        if k not in allowed:
            key = f"{section}.{k}" if section else str(k)
            raise ConfigError(f"unknown key {key}", key)


# -- sections ------------------------------------------------------------------------

def _data(raw, base_dir) -> DataConfig:
    _check_keys(raw, {f.name for f in fields(DataConfig)}, "data")
    csv_path = raw.get("csv_path", "")
    if csv_path:
        csv_path = _str(csv_path, "data.csv_path")
        if base_dir and not os.path.isabs(csv_path):
            csv_path = os.path.join(base_dir, csv_path)
    date_column = _str(raw.get("date_column", "date"), "data.date_column")
    target = raw.get("target", "")
    if target:
        target = _str(target, "data.target")
    features = raw.get("features")
    if features is not None:
        if not isinstance(features, (list, tuple)) or not all(isinstance(f, str) for f in features):
            raise ConfigError("data.features must be a list of series names", "data.features")
        features = tuple(features)
    series = {}
    for name, spec in _mapping(raw.get("series"), "data.series").items():
        key = f"data.series.{name}"
        spec = _mapping(spec, key)
        _check_keys(spec, {"frequency", "lag"}, key)
        try:
            freq = Frequency.parse(spec.get("frequency", "monthly"))
        except ValueError as exc:
            raise ConfigError(f"{key}.frequency: {exc}", f"{key}.frequency") from None
        lag = _int(spec.get("lag", 0), f"{key}.lag", 0)
        series[str(name)] = SeriesMeta(str(name), freq, lag)
    return DataConfig(csv_path, date_column, target, features, series)


def _simple(cls, raw, section):
    _check_keys(raw, {f.name for f in fields(cls)}, section)
    values = {}
    for f in fields(cls):
        if f.name not in raw:
            continue
        key = f"{section}.{f.name}"
        v = raw[f.name]
        default = f.default
        if isinstance(default, bool):
            values[f.name] = _bool(v, key)
        elif isinstance(default, int):
            values[f.name] = _int(v, key)
        elif isinstance(default, float):
            values[f.name] = _float(v, key)
        else:
            values[f.name] = v
    return values


def _model(raw) -> ModelConfig:
    v = _simple(ModelConfig, raw, "model")
    cfg = ModelConfig(**v)
    for name in ("n_timesteps", "hidden_size", "n_layers", "batch_size", "n_networks", "n_jobs"):
        _int(getattr(cfg, name), f"model.{name}", 1)
    _int(cfg.epochs, "model.epochs", 0)
    if not cfg.learning_rate > 0:
        raise ConfigError("model.learning_rate must be positive", "model.learning_rate")
    return cfg


def _backtest(raw) -> BacktestConfig:
    _check_keys(raw, {f.name for f in fields(BacktestConfig)}, "backtest")
    train_end = _month(raw["train_end"], "backtest.train_end") if raw.get("train_end") is not None else None
    quarters = _quarters(raw.get("test_quarters", ()), "backtest.test_quarters")
    offsets = raw.get("offsets", list(VINTAGE_OFFSETS))
    if not isinstance(offsets, (list, tuple)) or not offsets:
        raise ConfigError("backtest.offsets must be a non-empty list", "backtest.offsets")
    offsets = tuple(_int(o, "backtest.offsets") for o in offsets)
    if any(o not in VINTAGE_OFFSETS for o in offsets) or len(set(offsets)) != len(offsets):
        raise ConfigError(f"backtest.offsets must be distinct values from {list(VINTAGE_OFFSETS)}",
                          "backtest.offsets")
    audit = _bool(raw.get("audit", True), "backtest.audit")
    if train_end is not None:
        for q in quarters:
            if month_ordinal(quarter_end(q)) <= month_ordinal(train_end):
                raise ConfigError(f"test quarter {q[0]}Q{q[1]} does not follow train_end "
                                  f"{format_month(train_end)}", "backtest.test_quarters")
    return BacktestConfig(train_end, quarters, offsets, audit)


def _experiment(raw) -> ExperimentConfig:
    cfg = ExperimentConfig(**_simple(ExperimentConfig, raw, "experiment"))
    _int(cfg.n_runs, "experiment.n_runs", 0)
    _int(cfg.min_features, "experiment.min_features", 1)
    if cfg.max_features < cfg.min_features:
        raise ConfigError("experiment.max_features must be >= min_features", "experiment.max_features")
    return cfg


def _predict(raw) -> PredictConfig:
    _check_keys(raw, {f.name for f in fields(PredictConfig)}, "predict")
    as_of = _month(raw["as_of"], "predict.as_of") if raw.get("as_of") is not None else None
    return PredictConfig(as_of, _quarters(raw.get("quarters", ()), "predict.quarters"))


def from_dict(raw: dict, base_dir: str | None = None) -> RunConfig:
    raw = _mapping(raw, "config")
    _check_keys(raw, set(SECTIONS) | {"synth", "output_dir"}, None)
    fill_raw = _mapping(raw.get("fill"), "fill")
    _check_keys(fill_raw, {"edge_method"}, "fill")
    try:
        edge = EdgeMethod(fill_raw.get("edge_method", "arma"))
    except ValueError:
        raise ConfigError("fill.edge_method must be 'mean' or 'arma'", "fill.edge_method") from None
    output_dir = _str(raw.get("output_dir", "output"), "output_dir")
    if base_dir and not os.path.isabs(output_dir):
        output_dir = os.path.join(base_dir, output_dir)
    return RunConfig(
        data=_data(_mapping(raw.get("data"), "data"), base_dir),
        transform=TransformConfig(**_simple(TransformConfig, _mapping(raw.get("transform"), "transform"),
                                            "transform")),
        fill=FillConfig(edge),
        model=_model(_mapping(raw.get("model"), "model")),
        baselines=BaselinesConfig(**_simple(BaselinesConfig, _mapping(raw.get("baselines"), "baselines"),
                                            "baselines")),
        backtest=_backtest(_mapping(raw.get("backtest"), "backtest")),
        experiment=_experiment(_mapping(raw.get("experiment"), "experiment")),
        predict=_predict(_mapping(raw.get("predict"), "predict")),
        synth=dict(_mapping(raw.get("synth"), "synth")),
        output_dir=output_dir,
    )


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values are parsed as YAML."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        key, sep, text = str(item).partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form KEY=VALUE", key or None)
        try:
            value = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"override {key}: cannot parse value {text!r}: {exc}", key) from None
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.get(part)
            if child is None:
                child = node[part] = {}
            if not isinstance(child, dict):
                raise ConfigError(f"override {key}: {part} is not a section", key)
            node = child
        node[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> RunConfig:
    """Read, override and validate a configuration file (``path`` may be None)."""
    raw, base_dir = {}, None
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}", "config") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}", "config") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config {path} must be a mapping at the top level", "config")
        base_dir = os.path.dirname(os.path.abspath(path))
    return from_dict(apply_overrides(raw, overrides), base_dir)
