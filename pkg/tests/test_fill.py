import numpy as np
import pytest
from hypothesis import given, strategies as st

from nowcaster import arma
from nowcaster.errors import FillError
from nowcaster.fill import EdgeMethod, FillMethod, fill_panel, fill_series, split_missing
from nowcaster.panel import Frequency, Panel, SeriesMeta, vintage_view

nan = np.nan


def test_split_missing_examples():
    i, e = split_missing([1, nan, 3, nan, nan])
    assert i.tolist() == [1] and e.tolist() == [3, 4]
    i, e = split_missing([1.0, 2.0])
    assert i.size == 0 and e.size == 0
    i, e = split_missing([nan] * 4)
    assert i.size == 0 and e.tolist() == [0, 1, 2, 3]


def test_leading_missing_counts_as_interior():
    i, e = split_missing([nan, nan, 1.0, nan])
    assert i.tolist() == [0, 1] and e.tolist() == [3]


def test_mean_fill_example():
    out = fill_series([1, nan, 3], np.arange(3), 3, EdgeMethod.MEAN)
    np.testing.assert_array_equal(out, [1, 2, 3])


def test_arma_edge_halving_series():
    x = np.r_[2.0 ** np.arange(12, 0, -1), nan, nan]
    out = fill_series(x, np.arange(14), 14, EdgeMethod.ARMA)
    np.testing.assert_allclose(out[-2:], [1.0, 0.5], atol=1e-9)


def test_arma_edge_matches_forecast_oracle():
    rng = np.random.default_rng(0)
    x = np.empty(60)
    x[0] = 0.0
    for t in range(1, 60):
        x[t] = 0.1 + 0.6 * x[t - 1] + rng.normal()
    vals = np.r_[x, nan, nan, nan]
    out = fill_series(vals, np.arange(63), 40, EdgeMethod.ARMA)
    model = arma.auto_arma(x)
    np.testing.assert_array_equal(out[-3:], arma.forecast(model, x, 3))


def test_short_history_falls_back_to_mean():
    out = fill_series([1.0, 2.0, 3.0, nan], np.arange(4), 4, EdgeMethod.ARMA)
    assert out[-1] == 2.0


def test_quarterly_edge_forecasts_at_native_rows():
    n = 72
    rng = np.random.default_rng(2)
    q = np.full(n, nan)
    rows = np.arange(2, n, 3)
    q[rows] = rng.normal(size=rows.size)
    q[rows[-2:]] = nan
    x = np.ones(n)
    p = Panel((2000, 1), {"q": q, "x": x}, {"q": SeriesMeta("q", Frequency.QUARTERLY), "x": SeriesMeta("x")}, "q")
    filled = fill_panel(p, EdgeMethod.ARMA)
    hist = q[rows[:-2]]
    fc = arma.forecast(arma.auto_arma(hist), hist, 2)
    np.testing.assert_array_equal(filled["q"][rows[-2:]], fc)
    mean = q[~np.isnan(q)].mean()
    between = np.setdiff1d(np.arange(n), rows)
    np.testing.assert_array_equal(filled["q"][between], mean)


def test_fill_error_names_series():
    p = Panel((2000, 1), {"x": np.ones(6), "y": np.r_[nan, nan, nan, 1.0, 2, 3]},
              {"x": SeriesMeta("x"), "y": SeriesMeta("y")}, "x")
    with pytest.raises(FillError, match="'y'"):
        fill_panel(p, "mean", (2000, 3))


def test_complete_panel_is_unchanged(small_synth):
    filled = fill_panel(small_synth.panel)
    again = fill_panel(filled)
    assert again.equals(filled)
    assert filled.n_missing() == 0


@pytest.mark.parametrize("edge", ["mean", "arma"])
def test_vintages_fill_completely(small_synth, edge):
    v = vintage_view(small_synth.panel, (2009, 5))
    assert fill_panel(v, edge, (2008, 12)).n_missing() == 0


@given(st.floats(-100, 100), st.integers(0, 20))
def test_no_leakage_from_test_window(small_synth, value, k):
    p = small_synth.panel.truncate((2010, 12))
    train_end = (2008, 12)
    base = fill_panel(p, "mean", train_end)
    r = p.row(train_end) + 1 + k
    changed = {n: np.array(v) for n, v in p.series.items()}
    changed["x1"][r] = value
    other = fill_panel(p.replace(series=changed), "mean", train_end)
    for name in p.names:
        interior, _ = split_missing(p[name])
        np.testing.assert_array_equal(base[name][interior], other[name][interior])


def test_mean_fill_is_order_invariant(small_synth):
    p = vintage_view(small_synth.panel, (2010, 2))
    forward = fill_panel(p, "mean", (2009, 12))
    rev = p.select(list(reversed(p.names)))
    backward = fill_panel(rev, "mean", (2009, 12))
    for name in p.names:
        np.testing.assert_array_equal(forward[name], backward[name])


def test_fill_method_validation():
    with pytest.raises(ValueError):
        FillMethod(interior="median")
    assert FillMethod(edge="mean").edge is EdgeMethod.MEAN
