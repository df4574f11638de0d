"""Command-line entry point: ``nowcaster {train,predict,backtest,synth}``.

Every command reads a YAML run configuration (``--config``) with optional
``--set section.key=value`` overrides and writes fixed-name files under
``output_dir``. Failures print one JSON line on stderr and exit with

    2  configuration error
    3  data, fitting or model-file error
    4  numerical error (including training divergence)
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields

import numpy as np
import yaml

from . import ensemble
from .config import RunConfig, load_config
from .errors import (ConfigError, DataError, FitError, FormatError, NowcastError, NumericalError,
                     SchemaError)
from .evalharness.backtest import BacktestSetup, backtest, feature_sampling_experiment, training_quarters
from .evalharness.report import format_table, report_from_backtest, report_from_experiment, \
    write_ratios_csv, write_report_csv
from .evalharness.synthetic import SyntheticSpec, generate_synthetic
from .fill import fill_panel
from .panel import (Panel, add_quarters, format_month, format_quarter, growth_rate, load_csv,
                    month_ordinal, parse_month, parse_quarter, quarter_end, quarter_of, vintage_view,
                    write_csv)
from .tensorize import fit_scaler, make_batch

log = logging.getLogger("nowcaster")

MODEL_FILE = "model.ens"
PREDICTIONS_FILE = "predictions.csv"
REPORT_FILE = "report.csv"
REPORT_TABLE_FILE = "report.txt"
RATIOS_FILE = "ratios.csv"
TRAINING_LOG = "training.log"

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL, EXIT_INTERNAL = 0, 2, 3, 4, 1


# -- shared steps ---------------------------------------------------------------

def load_panel(cfg: RunConfig) -> Panel:
    d = cfg.data
    if not d.csv_path:
        raise ConfigError("data.csv_path is required", "data.csv_path")
    if not d.target:
        raise ConfigError("data.target is required", "data.target")
    if not os.path.exists(d.csv_path):
        raise ConfigError(f"data file {d.csv_path} does not exist", "data.csv_path")
    panel = load_csv(d.csv_path, {n: m for n, m in d.series.items()}, d.date_column)
    if d.target not in panel.series:
        raise ConfigError(f"target series {d.target!r} is not a column of {d.csv_path}", "data.target")
    for name in d.series:
        if name not in panel.series:
            raise ConfigError(f"series {name!r} is not a column of {d.csv_path}", f"data.series.{name}")
    for name in d.features or ():
        if name not in panel.series:
            raise ConfigError(f"feature {name!r} is not a column of {d.csv_path}", "data.features")
    panel = panel.replace(target_name=d.target)
    if cfg.transform.growth_rates:
        panel = growth_rate(panel)
    return panel


def feature_names(cfg: RunConfig, panel: Panel) -> tuple:
    if cfg.data.features:
        return tuple(cfg.data.features)
    return tuple(panel.names)


def _out(cfg: RunConfig, name: str) -> str:
    os.makedirs(cfg.output_dir, exist_ok=True)
    return os.path.join(cfg.output_dir, name)


def _models(cfg: RunConfig) -> tuple:
    models = ["lstm"]
    if cfg.baselines.dfm:
        models.append("dfm")
    if cfg.baselines.arma_benchmark:
        models.append("arma")
    if cfg.baselines.naive:
        models.append("naive")
    return tuple(models)


# -- commands -----------------------------------------------------------------------

def cmd_train(cfg: RunConfig, args) -> int:
    panel = load_panel(cfg)
    train_end = cfg.backtest.train_end or panel.end
    if month_ordinal(train_end) < month_ordinal(panel.start):
        raise ConfigError("backtest.train_end precedes the data", "backtest.train_end")
    features = feature_names(cfg, panel)
    train_panel = panel.truncate(train_end)
    filled = fill_panel(train_panel, cfg.fill.edge_method, train_end)
    scaler = fit_scaler(filled, train_end, features)
    hp = cfg.model.hyperparams()
    batch = make_batch(filled, scaler, hp.n_timesteps, training_quarters(train_panel, train_end))
    log.info("training %d networks on %d quarters x %d features", cfg.model.n_networks, len(batch),
             len(features))
    ens = ensemble.train_ensemble(batch, hp, cfg.model.n_networks, cfg.model.seed, scaler, train_end,
                                  n_jobs=cfg.model.n_jobs)
    ensemble.save(ens, _out(cfg, MODEL_FILE))
    with open(_out(cfg, TRAINING_LOG), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"# train_end {format_month(train_end)}; {len(batch)} quarters; "
                 f"features {','.join(features)}\n")
        fh.write("member\tseed\tepoch\tloss\n")
        for k, m in enumerate(ens.members):
            for epoch, loss in enumerate(m.loss_history):
                fh.write(f"{k}\t{m.seed}\t{epoch}\t{loss!r}\n")
    print(_out(cfg, MODEL_FILE))
    return EXIT_OK


def predict_quarters(ens, panel: Panel, as_of, quarters, edge_method) -> np.ndarray:
    """Ensemble nowcasts for ``quarters`` from the vintage published at ``as_of``."""
    missing = [n for n in ens.feature_names if n not in panel.series]
    if missing:
        raise SchemaError(f"model features {missing} are absent from the data")
    if ens.target_name != panel.target_name:
        raise SchemaError(f"model target {ens.target_name!r} differs from data target {panel.target_name!r}")
    if month_ordinal(as_of) < month_ordinal(panel.start):
        raise DataError(f"as_of {format_month(as_of)} precedes the data start {format_month(panel.start)}")
    end = max([as_of] + [quarter_end(q) for q in quarters], key=month_ordinal)
    view = vintage_view(panel.select(ens.feature_names), as_of)
    view = view.truncate(end) if month_ordinal(view.end) > month_ordinal(end) else view.extend(end)
    filled = fill_panel(view, edge_method, ens.train_end)
    batch = make_batch(filled, ens.scaler, ens.hyperparams.n_timesteps, quarters, with_targets=False)
    return ensemble.predict_ensemble(ens, batch)


def cmd_predict(cfg: RunConfig, args) -> int:
    model_path = args.model or os.path.join(cfg.output_dir, MODEL_FILE)
    try:
        as_of = parse_month(args.as_of) if args.as_of else cfg.predict.as_of
        quarters = tuple(parse_quarter(q) for q in args.quarters.split(",")) if args.quarters else None
    except ValueError as exc:
        raise ConfigError(str(exc), "--as-of" if args.as_of and "month" in str(exc) else "--quarters") from None
    if as_of is None:
        raise ConfigError("predict.as_of (or --as-of) is required", "predict.as_of")
    if not quarters:
        quarters = cfg.predict.quarters or (quarter_of(as_of),)
    ens = ensemble.load(model_path)
    panel = load_panel(cfg)
    preds = predict_quarters(ens, panel, as_of, quarters, cfg.fill.edge_method)
    path = _out(cfg, PREDICTIONS_FILE)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("quarter,prediction\n")
        for q, p in zip(quarters, preds):
            fh.write(f"{format_quarter(q)},{float(p)!r}\n")
    print(path)
    return EXIT_OK


def cmd_backtest(cfg: RunConfig, args) -> int:
    b = cfg.backtest
    if b.train_end is None:
        raise ConfigError("backtest.train_end is required", "backtest.train_end")
    if not b.test_quarters:
        raise ConfigError("backtest.test_quarters is required", "backtest.test_quarters")
    panel = load_panel(cfg)
    features = feature_names(cfg, panel)
    setup = BacktestSetup(b.train_end, b.test_quarters, b.offsets, cfg.model.hyperparams(),
                          cfg.model.n_networks, cfg.model.seed, cfg.fill.edge_method, _models(cfg),
                          audit=b.audit, n_jobs=cfg.model.n_jobs)
    exp_cfg = cfg.experiment
    lines = []
    if exp_cfg.n_runs > 0:
        pool = tuple(n for n in features if n != panel.target_name)
        if len(pool) < exp_cfg.max_features:
            raise ConfigError(f"feature pool has {len(pool)} series, fewer than "
                              f"experiment.max_features={exp_cfg.max_features}", "experiment.max_features")

        def progress(r, run):
            lines.append(f"run {r}\tbase_seed {run.base_seed}\tfeatures {','.join(run.features)}"
                         + (f"\texcluded {run.excluded}" if run.excluded else ""))

        exp = feature_sampling_experiment(panel, setup, pool, exp_cfg.n_runs, exp_cfg.min_features,
                                          exp_cfg.max_features, cfg.model.seed, progress=progress)
        report = report_from_experiment(exp)
    else:
        result = backtest(panel, setup, features)
        for f in result.failures:
            lines.append(f"failure\t{f.model}\t{f.offset}\t"
                         f"{format_quarter(f.quarter) if f.quarter else ''}\t{f.message}")
        report = report_from_backtest(result)
    write_report_csv(report, _out(cfg, REPORT_FILE))
    ratios_path = _out(cfg, RATIOS_FILE)
    if "dfm" in setup.models:
        write_ratios_csv(report, ratios_path)
    elif os.path.exists(ratios_path):
        os.remove(ratios_path)
    table = format_table(report)
    with open(_out(cfg, REPORT_TABLE_FILE), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(table)
    with open(_out(cfg, TRAINING_LOG), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(line + "\n" for line in lines))
    sys.stdout.write(table)
    return EXIT_OK


def cmd_synth(cfg: RunConfig, args) -> int:
    allowed = {f.name for f in fields(SyntheticSpec)}
    for key in cfg.synth:
        if key not in allowed:
            raise ConfigError(f"unknown key synth.{key}", f"synth.{key}")
    values = dict(cfg.synth)
    for key in ("start", "publication_lags"):
        if isinstance(values.get(key), list):
            values[key] = tuple(values[key])
    if "start" in values and isinstance(values["start"], str):
        values["start"] = parse_month(values["start"])
    try:
        spec = SyntheticSpec(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}", "synth") from None
    data = generate_synthetic(spec)
    panel = data.panel
    csv_path = _out(cfg, "synthetic.csv")
    write_csv(panel, csv_path)
    quarters = [quarter_of(panel.date(r)) for r in panel.quarter_rows()]
    n_test = max(1, len(quarters) // 3)
    train_end = quarter_end(add_quarters(quarters[-n_test], -1))
    config = {
        "data": {
            "csv_path": "synthetic.csv",
            "date_column": "date",
            "target": panel.target_name,
            "series": {n: {"frequency": panel.meta[n].frequency.value, "lag": panel.meta[n].publication_lag}
                       for n in panel.names},
        },
        "backtest": {"train_end": format_month(train_end),
                     "test_quarters": f"{format_quarter(quarters[-n_test])}..{format_quarter(quarters[-1])}"},
        "output_dir": "results",
    }
    with open(_out(cfg, "synthetic.yaml"), "w", encoding="utf-8", newline="\n") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)
    print(csv_path)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "backtest": cmd_backtest, "synth": cmd_synth}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nowcaster", description="Mixed-frequency LSTM nowcasting.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("train", "train an ensemble and save it"),
                            ("predict", "nowcast quarters from a vintage"),
                            ("backtest", "vintage backtest or feature-sampling experiment"),
                            ("synth", "write a synthetic panel and a matching config")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", metavar="PATH", help="YAML run configuration")
        p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[],
                       help="override a config value, e.g. model.epochs=50 (repeatable)")
        if name == "predict":
            p.add_argument("--model", metavar="PATH", help=f"model file (default output_dir/{MODEL_FILE})")
            p.add_argument("--as-of", metavar="YYYY-MM", help="evaluation month of the vintage")
            p.add_argument("--quarters", metavar="LIST", help="comma-separated quarters, e.g. 2019Q2,2019Q3")
    return parser


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, FitError, FormatError)):
        return EXIT_DATA
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    return EXIT_INTERNAL


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.set)
        return COMMANDS[args.command](cfg, args)
    except (NowcastError, ValueError) as exc:
        code = _exit_code(exc)
        if isinstance(exc, ValueError) and not isinstance(exc, NowcastError):
            code = EXIT_DATA
        err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
        if getattr(exc, "field", None):
            err["field"] = exc.field
        sys.stderr.write(json.dumps(err, sort_keys=True) + "\n")
        return code


if __name__ == "__main__":
    sys.exit(main())
