import io

import numpy as np
import pytest

from nowcaster.errors import DataError
import importlib
from nowcaster.evalharness import report as rp
from nowcaster.evalharness.backtest import (BacktestResult, BacktestSetup, backtest, build_vintage,
                                            feature_sampling_experiment, sample_features, target_history,
                                            training_quarters)
from nowcaster.evalharness.metrics import mae, rmse
from nowcaster.lstm import LstmHyperparams
from nowcaster.panel import VINTAGE_OFFSETS, add_quarters, quarter_end

bt_module = importlib.import_module("nowcaster.evalharness.backtest")
TRAIN_END = (2009, 12)
QUARTERS = tuple(add_quarters((2010, 1), k) for k in range(8))


def _setup(**kw):
    base = dict(train_end=TRAIN_END, test_quarters=QUARTERS, n_networks=2,
                hyperparams=LstmHyperparams(n_timesteps=6, hidden_size=4, n_layers=1, epochs=3, batch_size=8))
    base.update(kw)
    return BacktestSetup(**base)


@pytest.fixture(scope="module")
def result(small_synth):
    return backtest(small_synth.panel, _setup())


@pytest.fixture(scope="module")
def report(result):
    return rp.report_from_backtest(result)


def test_layout_five_vintages_plus_average(report):
    assert report.vintages == tuple(rp.VINTAGE_LABELS[o] for o in VINTAGE_OFFSETS) + ("Average",)
    assert report.models == ("arma", "lstm", "dfm", "naive")
    assert len(report.rows) == 6 * 4
    for v in report.vintages:
        for m in report.models:
            report.cell(v, m)


def test_mae_not_above_rmse_in_every_cell(report):
    for row in report.rows:
        assert row.mae <= row.rmse + 1e-15


def test_average_row_is_mean_of_vintages(report):
    for m in report.models:
        vals = [report.cell(v, m).mae for v in report.vintages[:-1]]
        assert report.cell("Average", m).mae == pytest.approx(np.mean(vals), abs=1e-15)


def test_naive_is_training_mean(small_synth, result):
    p = small_synth.panel
    target = p["target"]
    rows = p.quarter_rows()
    train_mean = np.nanmean(target[rows[rows <= p.row(TRAIN_END)]])
    actual = np.array([target[p.row(quarter_end(q))] for q in QUARTERS])
    expected = np.mean(np.abs(actual - train_mean))
    for o in VINTAGE_OFFSETS:
        assert mae(result.errors("naive", o)) == pytest.approx(expected, abs=1e-14)


def test_perfect_predictor_scores_zero(result):
    preds = {m: np.tile(result.actuals, (5, 1)) for m in ("lstm", "dfm")}
    perfect = BacktestResult(result.setup, result.feature_names, result.quarters, result.actuals, preds, [], [])
    rep = rp.report_from_backtest(perfect)
    for row in rep.rows:
        assert row.mae == 0.0 and row.rmse == 0.0
    assert any("t-test" in n or "zero" in n.lower() for n in rep.notes)


def test_masking_audit_is_clean(result):
    assert len(result.audits) == 5 * len(QUARTERS)
    assert result.audit_violations == 0
    assert sum(a.masked_cells for a in result.audits) > 0


def test_audit_catches_a_leak(small_synth, monkeypatch):
    p = small_synth.panel
    vin = build_vintage(p, (2010, 2), -2, TRAIN_END)
    monkeypatch.setattr(bt_module, "vintage_view", lambda panel, ev: panel)
    leaky = build_vintage(p, (2010, 2), -2, TRAIN_END)
    record = bt_module.audit_vintage(p, leaky, TRAIN_END, bt_module.EdgeMethod.ARMA)
    assert record.violations
    assert vin.raw.n_missing() > leaky.raw.n_missing()


def test_backtest_is_deterministic(small_synth, report):
    again = rp.report_from_backtest(backtest(small_synth.panel, _setup()))
    a, b = io.StringIO(), io.StringIO()
    rp.write_report_csv(report, a)
    rp.write_report_csv(again, b)
    assert a.getvalue() == b.getvalue()


def test_model_failure_is_recorded(small_synth):
    res = backtest(small_synth.panel, _setup(models=("dfm", "naive"), audit=False), feature_names=["x1"])
    assert res.n_failed("dfm") == 5 * len(QUARTERS)
    assert any(f.model == "dfm" for f in res.failures)
    rep = rp.report_from_backtest(res)
    assert np.isnan(rep.cell("month of", "dfm").mae)
    assert rep.cell("month of", "dfm").failures == len(QUARTERS)
    assert "n/a" in rp.format_table(rep)


def test_arma_benchmark_ignores_concurrent_quarter(small_synth):
    vin = build_vintage(small_synth.panel, (2010, 2), 2, TRAIN_END)
    history, horizon = target_history(vin.raw, (2010, 2))
    assert horizon == 1
    assert history[-1] == small_synth.panel["target"][small_synth.panel.row((2010, 3))]


def test_training_quarters_stop_at_train_end(small_synth):
    qs = training_quarters(small_synth.panel, TRAIN_END)
    assert qs[-1] == (2009, 4) and qs[0] == (2004, 1)


def test_setup_validation():
    with pytest.raises(ValueError):
        _setup(test_quarters=((2009, 4),))
    with pytest.raises(ValueError):
        _setup(offsets=(0, 3))
    with pytest.raises(ValueError):
        _setup(models=("lstm", "svm"))


def test_missing_actual_is_data_error(small_synth):
    with pytest.raises(DataError):
        backtest(small_synth.panel, _setup(test_quarters=((2013, 1),)))


def test_sample_features_is_reproducible():
    pool = tuple(f"x{j}" for j in range(20))
    a = sample_features(pool, 10, 5, 20, 3)
    assert a == sample_features(pool, 10, 5, 20, 3)
    assert all(5 <= len(s) <= 20 and len(set(s)) == len(s) for s in a)
    with pytest.raises(ValueError):
        sample_features(pool[:4], 1, 2, 5, 0)


@pytest.fixture(scope="module")
def experiment(small_synth):
    setup = _setup(n_networks=1)
    return feature_sampling_experiment(small_synth.panel, setup, n_runs=3, min_f=2, max_f=5, seed=1)


def test_experiment_ratios_and_layout(experiment):
    rep = rp.report_from_experiment(experiment)
    assert rep.n_runs == 3 and rep.excluded_runs == 0
    assert len(rep.ratios) == 3 * 5 * 2
    assert all(r[3] > 0 for r in rep.ratios)
    assert len(rep.rows) == 6 * 4
    buf = io.StringIO()
    rp.write_ratios_csv(rep, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "run,vintage,metric,ratio" and len(lines) == 31
    row = rep.cell("month of", "lstm")
    assert row.df == 2 and row.p is not None


def test_experiment_runs_use_distinct_seeds(experiment):
    seeds = [r.base_seed for r in experiment.runs]
    assert len(set(seeds)) == 3
    assert [r.features for r in experiment.runs] == sample_features(experiment.pool, 3, 2, 5, 1)


def test_single_run_skips_tests_with_reason(small_synth):
    exp = feature_sampling_experiment(small_synth.panel, _setup(n_networks=1, audit=False), n_runs=1,
                                      min_f=2, max_f=3, seed=0)
    rep = rp.report_from_experiment(exp)
    assert rep.cell("month of", "lstm").p is None
    assert any("skipped" in n for n in rep.notes)
    assert len(rep.ratios) == 10


def test_report_csv_columns(report):
    buf = io.StringIO()
    rp.write_report_csv(report, buf)
    lines = buf.getvalue().splitlines()
    assert lines[0].split(",")[:8] == ["vintage", "model", "mae", "rmse", "t", "df", "p", "stars"]
    assert len(lines) == 1 + len(report.rows)


def test_format_table_layout(report):
    text = rp.format_table(report)
    lines = text.splitlines()
    assert lines[0].split("\t") == ["Vintage", "ARMA MAE", "LSTM MAE", "DFM MAE", "Naive MAE",
                                    "ARMA RMSE", "LSTM RMSE", "DFM RMSE", "Naive RMSE"]
    assert [ln.split("\t")[0] for ln in lines[1:7]] == list(report.vintages)
    assert "Note: * p < .05 ** p < .01 *** p < .001" in text
    assert "Masking audit: 0 violation(s)" in text


def test_lstm_rows_carry_tests(report):
    row = report.cell("Average", "lstm")
    assert row.df == 5 * len(QUARTERS) - 1
    assert 0.0 <= row.p <= 1.0
    assert row.stars == ("***" if row.p < .001 else "**" if row.p < .01 else "*" if row.p < .05 else "")
    assert report.cell("Average", "dfm").p is None


def test_errors_match_metric_definitions(result, report):
    e = result.errors("arma", 0)
    assert report.cell("month of", "arma").mae == mae(e)
    assert report.cell("month of", "arma").rmse == rmse(e)
