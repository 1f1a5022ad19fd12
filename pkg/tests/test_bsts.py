import numpy as np
import pandas as pd
import pytest
from scipy import stats

from synthimpact.bsts import (LOCAL_LEVEL, LOCAL_LINEAR_TREND, BstsPriors, ImpactPosterior, StateSpaceSpec,
                              effective_sample_size, ffbs, fit_bsts, impact_report, kalman_filter,
                              predict_counterfactual, split_rhat)
from synthimpact.errors import ValidationError
from synthimpact.oracle import scalar_kalman_filter, scalar_rts_smoother

YEARS = list(range(1990, 2020))


def _series(values, years=YEARS):
    return pd.Series(np.asarray(values, dtype=float), index=years[:len(values)])


# -- filtering and smoothing ------------------------------------------------------------

def test_kalman_filter_matches_scalar_recursion(rng):
    y = np.cumsum(rng.normal(size=40)) + rng.normal(scale=0.5, size=40)
    y[[5, 17, 18]] = np.nan
    for s2o, s2l in ((0.25, 1.0), (1.0, 0.01), (3.0, 2.0)):
        kf = kalman_filter(y, s2o, s2l, trend=LOCAL_LEVEL, a1=0.3, P1=2.0)
        ref = scalar_kalman_filter(y, s2o, s2l, 0.3, 2.0)
        assert np.max(np.abs(kf["m"][:, 0] - ref["att"])) < 1e-10
        assert np.max(np.abs(kf["P"][:, 0, 0] - ref["ptt"])) < 1e-10
        assert kf["loglik"] == pytest.approx(ref["loglik"], abs=1e-10)


def test_local_linear_trend_filter_against_dense_conditioning(rng):
    # stack (level, slope) over time as one Gaussian vector and condition on y
    n, s2o, s2l, s2s = 8, 0.5, 0.2, 0.05
    a1, P1 = np.array([1.0, 0.2]), np.diag([1.0, 0.1])
    y = rng.normal(size=n).cumsum()
    T = np.array([[1.0, 1.0], [0.0, 1.0]])
    Q = np.diag([s2l, s2s])
    # state covariances
    P = [P1]
    for _ in range(n - 1):
        P.append(T @ P[-1] @ T.T + Q)
    C = np.zeros((2 * n, 2 * n))
    for t in range(n):
        C[2 * t:2 * t + 2, 2 * t:2 * t + 2] = P[t]
        Tk = np.eye(2)
        for s in range(t + 1, n):
            Tk = T @ Tk
            C[2 * s:2 * s + 2, 2 * t:2 * t + 2] = Tk @ P[t]
            C[2 * t:2 * t + 2, 2 * s:2 * s + 2] = (Tk @ P[t]).T
    mean = np.concatenate([np.linalg.matrix_power(T, t) @ a1 for t in range(n)])
    Z = np.zeros((n, 2 * n))
    Z[np.arange(n), 2 * np.arange(n)] = 1.0
    Sy = Z @ C @ Z.T + s2o * np.eye(n)
    kf = kalman_filter(y, s2o, s2l, s2s, trend=LOCAL_LINEAR_TREND, a1=a1, P1=P1)
    post = mean + C @ Z.T @ np.linalg.solve(Sy, y - Z @ mean)
    assert np.allclose(kf["m"][-1], post[-2:], atol=1e-10)
    _, logdet = np.linalg.slogdet(Sy)
    r = y - Z @ mean
    ll = -0.5 * (n * np.log(2 * np.pi) + logdet + r @ np.linalg.solve(Sy, r))
    assert kf["loglik"] == pytest.approx(ll, abs=1e-9)


def test_ffbs_mean_matches_smoother():
    y = np.array([0.8, -0.3, 1.1])
    s2o, s2l, a1, p1 = 0.5, 0.3, 0.0, 1.0
    ms, ps = scalar_rts_smoother(y, s2o, s2l, a1, p1)
    rng = np.random.default_rng(3)
    kf = kalman_filter(y, s2o, s2l, trend=LOCAL_LEVEL, a1=a1, P1=p1)
    n = 50_000
    draws = np.array([ffbs(y, s2o, s2l, rng=rng, filtered=kf) for _ in range(n)])
    se = np.sqrt(ps / n)
    assert np.all(np.abs(draws.mean(axis=0) - ms) < 3 * se)
    assert np.allclose(draws.var(axis=0), ps, rtol=0.03)


# -- sampler --------------------------------------------------------------------------------

def test_regression_selection():
    rng = np.random.default_rng(11)
    X = pd.DataFrame(rng.normal(size=(30, 6)), columns=[f"x{i}" for i in range(1, 7)], index=YEARS)
    y = 2 * X["x1"] + 0.3 * rng.normal(size=30) + np.linspace(0, 3, 30)
    fit = fit_bsts(StateSpaceSpec(controls=X, seed=1), y, 3000, 1000)
    pip = fit.inclusion_probabilities()
    assert pip["x1"] > 0.9
    assert (pip.drop("x1") < 0.5).all(), pip


def test_constant_series_concentrates():
    y = _series(np.full(20, 7.5))
    fit = fit_bsts(StateSpaceSpec(trend=LOCAL_LEVEL, seed=2), y, 1500, 500)
    assert np.allclose(fit.fitted_frame()["mean"], 7.5, atol=0.01)
    post = predict_counterfactual(fit, None, _series(np.full(3, 7.5), list(range(2010, 2013))))
    cf = post.counterfactual()
    assert np.allclose(cf["q50"], 7.5, atol=0.01)
    # standardized variances stay near the prior floor
    assert np.median(fit.sigma2_obs) < 0.01 and np.median(fit.sigma2_level) < 0.01


def test_seed_determinism():
    rng = np.random.default_rng(4)
    X = pd.DataFrame(rng.normal(size=(30, 2)).cumsum(axis=0), columns=["a", "b"], index=YEARS)
    y = X["a"] + rng.normal(size=30)
    spec = StateSpaceSpec(controls=X, seed=9)
    runs = [fit_bsts(spec, y.loc[:2014], 400, 100) for _ in range(2)]
    assert runs[0].beta.tobytes() == runs[1].beta.tobytes()
    assert runs[0].sigma2_obs.tobytes() == runs[1].sigma2_obs.tobytes()
    p = [predict_counterfactual(r, X.loc[2015:], y.loc[2015:]).draws for r in runs]
    assert p[0].tobytes() == p[1].tobytes()
    other = fit_bsts(StateSpaceSpec(controls=X, seed=10), y.loc[:2014], 400, 100)
    assert not np.array_equal(other.sigma2_obs, runs[0].sigma2_obs)


def test_input_errors():
    y = _series(np.arange(20.0))
    with pytest.raises(ValidationError, match="must exceed"):
        fit_bsts(StateSpaceSpec(), y, 100, 100)
    with pytest.raises(ValidationError, match="at least 10"):
        fit_bsts(StateSpaceSpec(), y.iloc[:5], 100, 10)
    with pytest.raises(ValidationError):
        StateSpaceSpec(trend="seasonal")
    with pytest.raises(ValidationError):
        BstsPriors(expected_size=0)
    X = pd.DataFrame({"a": np.arange(20.0)}, index=YEARS[:20])
    fit = fit_bsts(StateSpaceSpec(controls=X), y, 60, 10)
    with pytest.raises(ValidationError, match="required"):
        predict_counterfactual(fit, None, _series([1.0], [2015]))
    with pytest.raises(ValidationError, match="missing"):
        predict_counterfactual(fit, X, _series([1.0], [2015]))


def test_prior_recovery_without_data():
    # no observations: every variance draw comes from its inverse-gamma prior
    pri = BstsPriors(shape=3.0, scale_fraction=2.0)
    y = _series(np.full(12, np.nan))
    fit = fit_bsts(StateSpaceSpec(trend=LOCAL_LEVEL, priors=pri, seed=5), y, 21_000, 1000)
    prior = stats.invgamma(3.0, scale=2.0)
    assert stats.kstest(fit.sigma2_obs[::10], prior.cdf).pvalue > 0.01
    assert stats.kstest(fit.sigma2_level[::10], prior.cdf).pvalue > 0.01


def test_multiple_chains_report_rhat():
    rng = np.random.default_rng(6)
    y = _series(np.cumsum(rng.normal(size=30)))
    fit = fit_bsts(StateSpaceSpec(trend=LOCAL_LEVEL, seed=1), y, 1500, 500, n_chains=2)
    assert fit.n_kept == 2000
    assert set(fit.rhat) == {"sigma2_obs", "sigma2_level"}
    assert all(0.9 < r < 1.2 for r in fit.rhat.values()), fit.rhat
    assert all(e > 0 for e in fit.ess.values())


# -- diagnostics ----------------------------------------------------------------------------

def test_ess_sanity(rng):
    iid = rng.normal(size=4000)
    assert 3000 < effective_sample_size(iid) < 5000
    ar = np.zeros(4000)
    for t in range(1, 4000):
        ar[t] = 0.9 * ar[t - 1] + rng.normal()
    # AR(1) with phi = 0.9: n (1 - phi) / (1 + phi) ~ 210
    assert 100 < effective_sample_size(ar) < 400
    assert np.isnan(effective_sample_size(np.ones(100)))


def test_rhat_sanity(rng):
    same = [rng.normal(size=1000) for _ in range(4)]
    assert split_rhat(same) == pytest.approx(1.0, abs=0.01)
    shifted = [rng.normal(size=1000) + k for k in range(4)]
    assert split_rhat(shifted) > 1.5


# -- impact summaries ----------------------------------------------------------------------------

def _posterior(draws, actual):
    years = tuple(range(2015, 2015 + draws.shape[1]))
    return ImpactPosterior(years, pd.Series(actual, index=list(years)), draws, pd.Series(dtype=float), {})


def test_identical_draws_zero_width():
    post = _posterior(np.full((50, 3), 4.0), [3.0, 4.0, 5.0])
    pw = post.pointwise()
    assert (pw.q025 == pw.q975).all() and pw["mean"].tolist() == [-1.0, 0.0, 1.0]
    assert post.cumulative()["q50"].tolist() == [-1.0, -1.0, 0.0]


def test_median_counterfactual_gives_zero_median_effect(rng):
    draws = rng.normal(10, 2, size=(4001, 4))
    post = _posterior(draws, np.median(draws, axis=0))
    assert np.allclose(post.pointwise()["q50"], 0, atol=1e-12)


def test_symmetric_draws_half_probability(rng):
    half = rng.normal(size=(5000, 2))
    draws = np.vstack([half, -half])
    post = _posterior(draws, [0.0, 0.0])
    assert np.allclose(post.prob_cumulative_negative(), 0.5, atol=1e-3)
    rep = impact_report(post)
    assert rep["final_year"]["year"] == 2016 and not rep["final_year"]["actual_below_q025"]


def test_intervals_monotone_and_checked(rng):
    post = _posterior(rng.normal(size=(300, 5)).cumsum(axis=1), np.zeros(5))
    for tab in (post.counterfactual(), post.pointwise(), post.cumulative()):
        assert (tab.q025 <= tab.q50).all() and (tab.q50 <= tab.q975).all()
    with pytest.raises(ValidationError):
        _posterior(np.zeros((0, 2)), [0.0, 0.0])
