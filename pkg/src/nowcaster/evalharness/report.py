"""Backtest reports: per-vintage MAE/RMSE tables, error ratios and t-tests.

Two files come out of a report. ``report.csv`` is a long table with one row
per (vintage, model) and the columns

    vintage, model, mae, rmse, t, df, p, stars, t_rmse, p_rmse, stars_rmse, n, failures

where the test columns belong to the LSTM rows (LSTM against the DFM,
alternative: LSTM errors lower). ``ratios.csv`` holds the LSTM/DFM error
ratios with columns ``run, vintage, metric, ratio``. :func:`format_table`
renders the same numbers as a wide text table, one row per vintage plus an
average row.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .backtest import MODEL_ORDER, BacktestResult, ExperimentResult
from .metrics import mae, rmse, stars, t_test_one_tailed

VINTAGE_LABELS = {-2: "2 months before", -1: "1 month before", 0: "month of",
                  1: "1 month after", 2: "2 months after"}
AVERAGE = "Average"
MODEL_LABELS = {"arma": "ARMA", "lstm": "LSTM", "dfm": "DFM", "naive": "Naive"}
REPORT_COLUMNS = ("vintage", "model", "mae", "rmse", "t", "df", "p", "stars",
                  "t_rmse", "p_rmse", "stars_rmse", "n", "failures")
RATIO_COLUMNS = ("run", "vintage", "metric", "ratio")
METRICS = ("mae", "rmse")


@dataclass(frozen=True)
class ReportRow:
    vintage: str
    model: str
    mae: float
    rmse: float
    t: float | None = None
    df: int | None = None
    p: float | None = None
    stars: str = ""
    t_rmse: float | None = None
    p_rmse: float | None = None
    stars_rmse: str = ""
    n: int = 0
    failures: int = 0


@dataclass(eq=False)
class BacktestReport:
    rows: list
    ratios: list = field(default_factory=list)  # (run, vintage, metric, ratio)
    notes: list = field(default_factory=list)
    models: tuple = ()
    vintages: tuple = ()
    n_runs: int = 1
    excluded_runs: int = 0
    audit_violations: int = 0
    audited_vintages: int = 0

    def cell(self, vintage: str, model: str) -> ReportRow:
        for row in self.rows:
            if row.vintage == vintage and row.model == model:
                return row
        raise KeyError((vintage, model))


def _test_fields(a_mae, b_mae, a_rmse, b_rmse, label, notes) -> dict:
    """t-test columns for one LSTM row; skipped tests leave them empty."""
    out = {}
    for metric, a, b in (("mae", a_mae, b_mae), ("rmse", a_rmse, b_rmse)):
        suffix = "" if metric == "mae" else "_rmse"
        try:
            res = t_test_one_tailed(a, b)
        except DataError as exc:
            notes.append(f"{label} {metric}: t-test skipped ({exc})")
            continue
        if res.note:
            notes.append(f"{label} {metric}: {res.note}")
        out["t" + suffix] = res.t
        out["p" + suffix] = res.p
        out["stars" + suffix] = stars(res.p)
        if metric == "mae":
            out["df"] = res.df
    return out


def _mean_or_nan(values) -> float:
    values = [v for v in values if np.isfinite(v)]
    return float(np.mean(values)) if values else float("nan")


def report_from_backtest(result: BacktestResult) -> BacktestReport:
    """Single backtest: metrics over test quarters, tests paired by quarter."""
    models = result.models
    labels = tuple(VINTAGE_LABELS[o] for o in result.offsets) + (AVERAGE,)
    notes, rows, ratios = [], [], []
    per_cell = {}
    for o in result.offsets:
        for m in models:
            e = result.errors(m, o)
            per_cell[(o, m)] = (mae(e), rmse(e)) if e.size else (float("nan"), float("nan"))
            if not e.size:
                notes.append(f"{VINTAGE_LABELS[o]} {m}: every prediction failed")
    paired = "lstm" in models and "dfm" in models
    pooled = {"lstm": [], "dfm": []}
    for o in result.offsets:
        label = VINTAGE_LABELS[o]
        tests = {}
        if paired:
            i = result.offsets.index(o)
            el = result.predictions["lstm"][i] - result.actuals
            ed = result.predictions["dfm"][i] - result.actuals
            ok = np.isfinite(el) & np.isfinite(ed)
            pooled["lstm"].append(el[ok])
            pooled["dfm"].append(ed[ok])
            tests = _test_fields(np.abs(el[ok]), np.abs(ed[ok]), el[ok] ** 2, ed[ok] ** 2, label, notes)
            for metric, k in (("mae", 0), ("rmse", 1)):
                num, den = per_cell[(o, "lstm")][k], per_cell[(o, "dfm")][k]
                if np.isfinite(num) and np.isfinite(den) and den > 0:
                    ratios.append((0, label, metric, num / den))
        for m in models:
            rows.append(ReportRow(label, m, *per_cell[(o, m)], n=len(result.errors(m, o)),
                                  failures=result.n_failed(m, o), **(tests if m == "lstm" else {})))
    tests = {}
    if paired:
        el, ed = np.concatenate(pooled["lstm"]), np.concatenate(pooled["dfm"])
        tests = _test_fields(np.abs(el), np.abs(ed), el ** 2, ed ** 2, AVERAGE, notes)
    for m in models:
        rows.append(ReportRow(AVERAGE, m, _mean_or_nan(per_cell[(o, m)][0] for o in result.offsets),
                              _mean_or_nan(per_cell[(o, m)][1] for o in result.offsets),
                              n=sum(len(result.errors(m, o)) for o in result.offsets),
                              failures=result.n_failed(m), **(tests if m == "lstm" else {})))
    n_audit = len(result.audits)
    return BacktestReport(rows, ratios, notes, models, labels, 1, 0, result.audit_violations, n_audit)


def _run_metrics(result: BacktestResult, model: str) -> dict:
    out = {}
    for o in result.offsets:
        e = result.errors(model, o)
        out[o] = (mae(e), rmse(e))
    return out


def report_from_experiment(exp: ExperimentResult) -> BacktestReport:
    """Feature-sampling experiment: per-run metrics averaged over runs.

    Tests pair the LSTM and DFM metrics of each valid run; the average row
    pairs the runs' vintage-averaged metrics.
    """
    setup = exp.setup
    offsets = setup.offsets
    labels = tuple(VINTAGE_LABELS[o] for o in offsets) + (AVERAGE,)
    notes, rows, ratios = [], [], []
    valid = exp.valid_runs
    excluded = len(exp.runs) - len(valid)
    if excluded:
        notes.append(f"{excluded} of {len(exp.runs)} runs excluded after model failures")
    paired = tuple(m for m in ("lstm", "dfm") if m in setup.models)
    run_metrics = {m: [_run_metrics(r.result, m) for r in valid] for m in paired}
    bench = exp.benchmarks
    bench_models = bench.models if bench is not None else ()
    models = tuple(m for m in MODEL_ORDER if m in paired or m in bench_models)

    def cell(m, o):
        if m in paired:
            vals = run_metrics[m]
            if not vals:
                return float("nan"), float("nan"), 0, 0
            return (float(np.mean([v[o][0] for v in vals])), float(np.mean([v[o][1] for v in vals])),
                    len(vals), 0)
        e = bench.errors(m, o)
        if not e.size:
            return float("nan"), float("nan"), 0, bench.n_failed(m, o)
        return mae(e), rmse(e), len(e), bench.n_failed(m, o)

    both = "lstm" in paired and "dfm" in paired
    for o in offsets:
        label = VINTAGE_LABELS[o]
        tests = {}
        if both:
            lm = np.array([v[o] for v in run_metrics["lstm"]]).reshape(-1, 2)
            dm = np.array([v[o] for v in run_metrics["dfm"]]).reshape(-1, 2)
            tests = _test_fields(lm[:, 0], dm[:, 0], lm[:, 1], dm[:, 1], label, notes)
            for run, a, b in zip(valid, lm, dm):
                for k, metric in enumerate(METRICS):
                    if b[k] > 0:
                        ratios.append((run.run, label, metric, a[k] / b[k]))
        for m in models:
            m_mae, m_rmse, n, fails = cell(m, o)
            rows.append(ReportRow(label, m, m_mae, m_rmse, n=n, failures=fails,
                                  **(tests if m == "lstm" else {})))
    tests = {}
    if both:
        avg = {m: np.array([[np.mean([v[o][k] for o in offsets]) for k in range(2)] for v in run_metrics[m]])
               .reshape(-1, 2) for m in paired}
        tests = _test_fields(avg["lstm"][:, 0], avg["dfm"][:, 0], avg["lstm"][:, 1], avg["dfm"][:, 1],
                             AVERAGE, notes)
    for m in models:
        cells = [cell(m, o) for o in offsets]
        rows.append(ReportRow(AVERAGE, m, _mean_or_nan(c[0] for c in cells), _mean_or_nan(c[1] for c in cells),
                              n=cells[0][2] if m in paired else sum(c[2] for c in cells),
                              failures=sum(c[3] for c in cells), **(tests if m == "lstm" else {})))
    audited = sum(len(r.result.audits) for r in exp.runs if r.result is not None)
    audited += len(bench.audits) if bench is not None else 0
    return BacktestReport(rows, ratios, notes, models, labels, len(exp.runs), excluded,
                          exp.audit_violations, audited)


# -- writers -------------------------------------------------------------------

def _num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if math.isnan(x):
        return ""
    return repr(x)


def _open(sink):
    if isinstance(sink, (str, os.PathLike)):
        return open(sink, "w", encoding="utf-8", newline=""), True
    return sink, False


def write_report_csv(report: BacktestReport, sink) -> None:
    fh, owned = _open(sink)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in report.rows:
            w.writerow([r.vintage, r.model, _num(r.mae), _num(r.rmse), _num(r.t), _num(r.df), _num(r.p),
                        r.stars, _num(r.t_rmse), _num(r.p_rmse), r.stars_rmse, _num(r.n), _num(r.failures)])
    finally:
        if owned:
            fh.close()


def write_ratios_csv(report: BacktestReport, sink) -> None:
    fh, owned = _open(sink)
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATIO_COLUMNS)
        for run, vintage, metric, ratio in report.ratios:
            w.writerow([run, vintage, metric, _num(ratio)])
    finally:
        if owned:
            fh.close()


def format_table(report: BacktestReport, digits: int = 4, title: str | None = None) -> str:
    """Tab-separated table: MAE columns then RMSE columns, stars on the LSTM."""
    head = ["Vintage"] + [f"{MODEL_LABELS[m]} {metric.upper()}" for metric in METRICS for m in report.models]
    lines = [title] if title else []
    lines.append("\t".join(head))
    for label in report.vintages:
        cells = [label]
        for metric in METRICS:
            for m in report.models:
                row = report.cell(label, m)
                value = getattr(row, metric)
                text = "n/a" if not np.isfinite(value) else f"{value:.{digits}f}"
                if m == "lstm" and np.isfinite(value):
                    text += row.stars if metric == "mae" else row.stars_rmse
                cells.append(text)
        lines.append("\t".join(cells))
    lines.append("")
    lines.append("Note: * p < .05 ** p < .01 *** p < .001")
    for note in report.notes:
        lines.append(f"Note: {note}")
    if report.audited_vintages:
        lines.append(f"Masking audit: {report.audit_violations} violation(s) over "
                     f"{report.audited_vintages} vintage checks")
    return "\n".join(lines) + "\n"
