import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from synthimpact.errors import NumericalError, ValidationError
from synthimpact.oracle import DgpSpec, dense_hp_trend, generate_panel, ols_line
from synthimpact.trend import decompose_shortfall, growth_decomposition, hp_filter, potential_path, shortfall_analysis

from conftest import sim_problem

YEARS = list(range(2014, 2020))


# -- HP filter ----------------------------------------------------------------------

def test_hp_constant_and_linear():
    c = np.full(12, 4.2)
    trend, cycle = hp_filter(c, 100)
    assert np.allclose(trend, c, atol=1e-12) and np.allclose(cycle, 0, atol=1e-12)
    t = np.arange(30.0)
    lin = 1000 + 37.5 * t
    trend, _ = hp_filter(lin, 100)
    assert np.max(np.abs(trend - lin)) < 1e-10


def test_hp_matches_dense_solve(rng):
    for lamb in (1.0, 100.0, 1600.0, 1e5):
        y = rng.normal(size=30).cumsum() + 50
        trend, cycle = hp_filter(y, lamb)
        ref = dense_hp_trend(y, lamb)
        assert np.max(np.abs(trend - ref)) / np.max(np.abs(ref)) < 1e-8
        assert np.array_equal(trend + cycle, y) or np.allclose(trend + cycle, y, rtol=0, atol=1e-12)


def test_hp_large_lambda_is_ols_line(rng):
    y = rng.normal(size=30).cumsum() * 100 + 5000
    trend, cycle = hp_filter(y, 1e12)
    assert np.max(np.abs(trend - ols_line(y))) < 1e-6
    assert abs(cycle.sum()) < 1e-6


@settings(max_examples=40, deadline=None)
@given(a=st.floats(-10, 10), b=st.floats(-10, 10), seed=st.integers(0, 10_000), n=st.integers(4, 40))
def test_hp_is_linear(a, b, seed, n):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=n), rng.normal(size=n)
    lhs = hp_filter(a * x + b * y, 100)[0]
    rhs = a * hp_filter(x, 100)[0] + b * hp_filter(y, 100)[0]
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * (1 + abs(a) + abs(b)))


def test_hp_input_checks():
    with pytest.raises(ValidationError, match="length >= 4"):
        hp_filter(np.ones(3))
    with pytest.raises(ValidationError):
        hp_filter(np.ones(10), 0)
    with pytest.raises(ValidationError, match="NaN"):
        hp_filter(np.r_[np.ones(5), np.nan])


def test_hp_keeps_series_index():
    s = pd.Series(np.arange(10.0) ** 2, index=range(2000, 2010), name="gdp")
    trend, cycle = hp_filter(s)
    assert list(trend.index) == list(s.index) and trend.name == "gdp"


# -- potential path ------------------------------------------------------------------

def test_potential_path_trivial():
    assert potential_path(2014, 50.0, 0.0, end_year=2019).tolist() == [50.0] * 6
    assert potential_path(0, 100.0, 100.0, end_year=2).tolist() == [100.0, 200.0, 400.0]
    p = potential_path(2014, 1.0, 4.5, end_year=2019)
    assert p[2019] == pytest.approx(1.045 ** 5)
    with pytest.raises(ValidationError):
        potential_path(2014, 1.0, 4.5, years=[2013, 2014])
    with pytest.raises(ValidationError):
        potential_path(2014, 1.0, float("nan"))


# -- level decomposition ----------------------------------------------------------------

def _s(values):
    return pd.Series(np.asarray(values, dtype=float), index=YEARS)


def test_components_sum_exactly(rng):
    a = _s(100 + rng.normal(size=6).cumsum())
    s = _s(a + rng.uniform(0, 5, 6))
    p = _s(s + rng.uniform(0, 5, 6))
    d = decompose_shortfall(a, s, p, (2014, 2019))
    assert ((d.internal + d.external) == d.total).all() or np.allclose(d.internal + d.external, d.total,
                                                                        rtol=0, atol=1e-12)
    ok = d.total > 0
    assert np.allclose((d.internal_share + d.external_share)[ok], 1, atol=1e-9)
    assert d.period_internal_share == pytest.approx(d.internal.sum() / d.total.sum())


def test_decomposition_trivial_cases():
    a = _s([100, 101, 102, 103, 104, 105])
    p = _s([100, 104, 108, 112, 116, 120])
    same = decompose_shortfall(a, a, p, (2014, 2019))
    assert same.period_internal_share == 0 and same.period_external_share == 1
    full = decompose_shortfall(a, p, p, (2014, 2019))
    assert full.period_internal_share == 1
    # 2014 has zero shortfall: flagged and left out
    assert same.flagged == (2014,)
    assert np.isnan(same.internal_share[2014])


def test_flagged_years_excluded_from_period_share():
    a = _s([100, 110, 100, 100, 100, 100])
    s = _s([101, 105, 102, 102, 102, 102])
    p = _s([102, 108, 104, 104, 104, 104])
    d = decompose_shortfall(a, s, p, (2014, 2019))
    assert d.flagged == (2015,)
    keep = [y for y in YEARS if y != 2015]
    assert d.period_internal_share == pytest.approx(d.internal[keep].sum() / d.total[keep].sum())
    assert d.internal_share[2015] == pytest.approx(-5 / -2)


def test_all_nonpositive_is_error():
    a = _s([10] * 6)
    with pytest.raises(NumericalError, match="undefined"):
        decompose_shortfall(a, a - 1, a - 2, (2014, 2019))


def test_missing_years_rejected():
    a = _s([1, 2, 3, 4, 5, 6])
    with pytest.raises(ValidationError):
        decompose_shortfall(a, a, a.loc[:2018], (2014, 2019))


# -- growth decomposition ---------------------------------------------------------------

def test_growth_split_identities(rng):
    a = _s(100 * np.cumprod(1 + rng.uniform(0, 0.03, 6)))
    s = _s(100 * np.cumprod(1 + rng.uniform(0.01, 0.05, 6)))
    g = growth_decomposition(a, s, 4.5, (2014, 2019))
    assert g.internal_pp + g.external_pp == pytest.approx(4.5 - g.mean_actual_growth, abs=1e-12)
    assert g.growth_years == (2015, 2016, 2017, 2018, 2019)
    assert growth_decomposition(a, a, 4.5, (2014, 2019)).internal_pp == 0


def test_shortfall_analysis_scaling_and_anchor():
    a = _s([10, 10.2, 10.3, 10.5, 10.4, 10.6])
    s = _s([10.1, 10.5, 10.9, 11.2, 11.6, 12.0])
    pop = pd.Series(np.linspace(1, 1.1, 6), index=YEARS)
    d = shortfall_analysis(a, s, (2014, 2019), scale=pop)
    assert np.allclose(d.actual, a * pop) and d.potential[2014] == pytest.approx(a[2014] * pop[2014])
    assert d.growth is not None and d.raw_actual is not None
    dt = shortfall_analysis(a, s, (2014, 2019), anchor="trend", trended=True)
    assert dt.trended and dt.potential[2014] == pytest.approx(hp_filter(a)[0][2014])
    with pytest.raises(ValidationError):
        shortfall_analysis(a, s, (2014, 2019), anchor="peak")


# -- recovery on simulated panels ---------------------------------------------------------

def test_recovers_constructed_split():
    # potential built so that 60% of the true shortfall is internal
    shares = []
    for seed in range(3):
        problem, _ = sim_problem(seed=seed, n_donors=8, effect=-0.05, mix={1: 0.5, 2: 0.3, 3: 0.2},
                                 n_starts=3)
        fit = problem.fit()
        truth, _ = sim_problem(seed=seed, n_donors=8, mix={1: 0.5, 2: 0.3, 3: 0.2}, n_starts=0)
        cf = truth.panel.series("T00", "y")
        internal = cf - fit.actual
        potential = cf + internal * (0.4 / 0.6)
        d = decompose_shortfall(fit.actual, fit.synthetic, potential, (2014, 2019))
        shares.append(d.period_internal_share)
    assert np.all(np.abs(np.array(shares) - 0.6) < 0.05), shares


@pytest.mark.slow
def test_recovers_growth_drag():
    # treated growth cut by 1.5 pp a year from the treatment year on
    est = []
    for seed in range(50):
        problem, spec = sim_problem(seed=seed, n_donors=6, mix={1: 0.4, 2: 0.4, 3: 0.2}, n_starts=2)
        drag = {y: 0.985 ** (y - 2013) - 1 for y in spec.years if y >= 2014}
        dspec = DgpSpec.from_dict({**spec.to_dict(), "effect": drag})
        fit = problem.replace(panel=generate_panel(dspec)).fit()
        g = growth_decomposition(fit.actual, fit.synthetic, 4.5, (2014, 2019))
        est.append(g.internal_pp)
    assert abs(np.mean(est) - 1.5) < 0.3, np.mean(est)
