import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nowcaster.errors import DataError, DomainError, ParseError, PlacementError
from nowcaster.panel import (Frequency, Panel, SeriesMeta, add_months, growth_rate, load_csv, parse_quarter,
                             quarter_end, vintage_for_target, vintage_view, visible_mask, write_csv)

Q = Frequency.QUARTERLY


def _csv(text):
    return io.BytesIO(text.encode())


def test_load_three_monthly_rows():
    p = load_csv(_csv("date,x\n2019-01-01,1\n2019-02-01,2\n2019-03-01,3\n"))
    assert len(p) == 3 and p.start == (2019, 1)
    assert p.n_missing() == 0
    np.testing.assert_array_equal(p["x"], [1, 2, 3])


def test_load_quarterly_value_at_quarter_end():
    src = "date,x,gdp\n2019-01-01,1,\n2019-02-01,2,\n2019-03-01,3,0.5\n"
    p = load_csv(_csv(src), {"gdp": SeriesMeta("gdp", Q, 1)})
    assert np.isnan(p["gdp"][:2]).all()
    assert p["gdp"][2] == 0.5


def test_load_quarterly_value_off_quarter_is_placement_error():
    src = "date,x,gdp\n2019-01-01,1,\n2019-02-01,2,0.5\n2019-03-01,3,\n"
    with pytest.raises(PlacementError, match="2019-02"):
        load_csv(_csv(src), {"gdp": SeriesMeta("gdp", Q)})


def test_load_errors():
    with pytest.raises(ParseError, match="row 3"):
        load_csv(_csv("date,x\n2019-01-01,1\n2019-13-01,2\n"))
    with pytest.raises(DataError, match="duplicate"):
        load_csv(_csv("date,x\n2019-01-01,1\n2019-01-01,2\n"))
    with pytest.raises(DataError, match="at least 2"):
        load_csv(_csv("date,x\n2019-01-01,1\n"))


def test_load_gaps_in_dates_become_missing_rows():
    p = load_csv(_csv("date,x\n2019-01-01,1\n2019-04-01,4\n"))
    assert len(p) == 4
    assert np.isnan(p["x"][1:3]).all()


def test_csv_round_trip(small_synth, tmp_path):
    path = tmp_path / "p.csv"
    write_csv(small_synth.panel, path)
    meta = small_synth.panel.meta
    back = load_csv(path, meta, target_name="target")
    assert back.equals(small_synth.panel)


def test_growth_rate_examples():
    p = Panel((2019, 1), {"x": np.array([100.0, 110.0, 99.0])}, {"x": SeriesMeta("x")}, "x")
    g = growth_rate(p)["x"]
    assert np.isnan(g[0])
    np.testing.assert_allclose(g[1:], [0.10, -0.10], rtol=1e-12)
    p = Panel((2019, 1), {"x": np.array([5.0, 5.0, 5.0])}, {"x": SeriesMeta("x")}, "x")
    np.testing.assert_array_equal(growth_rate(p)["x"][1:], [0.0, 0.0])


def test_growth_rate_quarterly_native_frequency():
    x = np.full(6, np.nan)
    x[2], x[5] = 200.0, 210.0
    p = Panel((2019, 1), {"q": x}, {"q": SeriesMeta("q", Q)}, "q")
    g = growth_rate(p)["q"]
    assert np.isnan(np.delete(g, 5)).all()
    assert g[5] == pytest.approx(0.05, abs=1e-15)


def test_growth_rate_rejects_non_positive():
    p = Panel((2019, 1), {"x": np.array([1.0, 0.0, 2.0])}, {"x": SeriesMeta("x")}, "x")
    with pytest.raises(DomainError):
        growth_rate(p)


# level ratios up to 1e3; far larger ratios lose digits in 1 + g itself
@given(st.lists(st.floats(1.0, 1e3), min_size=2, max_size=40))
def test_growth_rate_reconstruction(levels):
    x = np.array(levels)
    p = Panel((2000, 1), {"x": x}, {"x": SeriesMeta("x")}, "x")
    g = growth_rate(p)["x"]
    rebuilt = x[0] * np.concatenate(([1.0], np.cumprod(1.0 + g[1:])))
    np.testing.assert_allclose(rebuilt, x, rtol=1e-10)


@pytest.mark.parametrize("quarter,offset,expected", [
    ((2019, 2), -2, (2019, 4)),
    ((2019, 2), 0, (2019, 6)),
    ((2019, 4), 2, (2020, 2)),
    ((2019, 1), -2, (2019, 1)),
])
def test_vintage_for_target(quarter, offset, expected):
    assert vintage_for_target(quarter, offset) == expected


def test_vintage_for_target_rejects_bad_offset():
    with pytest.raises(ValueError):
        vintage_for_target((2019, 2), 3)


def _lagged_panel(lag):
    x = np.arange(1.0, 13.0)
    return Panel((2019, 1), {"x": x}, {"x": SeriesMeta("x", publication_lag=lag)}, "x")


def test_vintage_view_lag_two():
    v = vintage_view(_lagged_panel(2), (2019, 6))["x"]
    assert not np.isnan(v[3]) and np.isnan(v[4:]).all()


def test_vintage_view_lag_zero_keeps_through_evaluation():
    v = vintage_view(_lagged_panel(0), (2019, 6))["x"]
    np.testing.assert_array_equal(v[:6], np.arange(1.0, 7.0))
    assert np.isnan(v[6:]).all()


def test_vintage_before_data_is_all_missing():
    assert vintage_view(_lagged_panel(1), (2018, 1)).n_missing() == 12


def test_vintage_for_april_2019(small_synth):
    ev = vintage_for_target(parse_quarter("2009Q2"), -2)
    v = vintage_view(small_synth.panel, ev)
    for name in v.names:
        lag = v.meta[name].publication_lag
        r_last = v.row(add_months(ev, -lag))
        assert np.isnan(v[name][r_last + 1:]).all()


months = st.tuples(st.integers(2003, 2013), st.integers(1, 12))


@given(months, months)
def test_vintage_nesting_and_idempotence(small_synth, d1, d2):
    p = small_synth.panel
    d1, d2 = sorted([d1, d2])
    v1, v2 = vintage_view(p, d1), vintage_view(p, d2)
    seen1, seen2 = ~np.isnan(v1.matrix()), ~np.isnan(v2.matrix())
    assert not (seen1 & ~seen2).any()
    assert vintage_view(v1, d1).equals(v1)
    mask = visible_mask(p, d1)
    assert not (seen1 & ~mask).any()


def test_panel_is_immutable(small_synth):
    with pytest.raises(ValueError):
        small_synth.panel["x1"][0] = 1.0


def test_quarter_helpers():
    assert quarter_end((2019, 4)) == (2019, 12)
    assert parse_quarter("2019Q3") == (2019, 3)
    with pytest.raises(ValueError):
        parse_quarter("2019Q5")
