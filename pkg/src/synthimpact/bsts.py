"""Bayesian structural time series counterfactuals.

Model, on the pre-period standardized scale::

    y_t     = mu_t + x_t' beta + eps_t,          eps_t  ~ N(0, s2_obs)
    mu_t+1  = mu_t + delta_t + eta_t,            eta_t  ~ N(0, s2_level)
    delta_t+1 = delta_t + zeta_t,                zeta_t ~ N(0, s2_slope)

(``delta`` is absent for the local-level trend.)  The Gibbs sampler cycles
through forward-filter backward-sample for the states, spike-and-slab
selection of the regression coefficients under a Zellner g-prior, and
conjugate inverse-gamma draws of the variances.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import NumericalError, ValidationError

logger = logging.getLogger(__name__)

LOCAL_LEVEL = "local_level"
LOCAL_LINEAR_TREND = "local_linear_trend"
TREND_TYPES = (LOCAL_LEVEL, LOCAL_LINEAR_TREND)
MIN_ESS = 50.0
_TINY = 1e-300


@dataclass(frozen=True)
class BstsPriors:
    """Prior hyperparameters, all on the standardized scale.

    Variances get inverse-gamma(``shape``, ``scale_fraction`` * sample
    variance) priors; the standardized sample variance is one.  Regressor
    inclusion probability defaults to ``min(0.5, expected_size / J)`` and the
    g-prior scale to the number of observed pre-period points.
    """

    expected_size: float = 3.0
    inclusion_prob: float | None = None
    g: float | None = None
    shape: float = 0.01
    scale_fraction: float = 0.01
    initial_level_var: float = 1.0
    initial_slope_var: float = 0.1

    def __post_init__(self):
        for name in ("expected_size", "shape", "scale_fraction", "initial_level_var", "initial_slope_var"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"prior {name} must be positive")
        if self.inclusion_prob is not None and not 0 < self.inclusion_prob < 1:
            raise ValidationError("inclusion probability must lie in (0, 1)")
        if self.g is not None and not self.g > 0:
            raise ValidationError("g must be positive")

    def pi(self, n_regressors: int) -> float:
        if self.inclusion_prob is not None:
            return self.inclusion_prob
        return min(0.5, self.expected_size / max(n_regressors, 1))

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class StateSpaceSpec:
    """Trend type, control design and priors.

    ``controls`` is a years x regressors frame covering pre and post periods;
    it must not contain the treated unit's own outcome.
    """

    trend: str = LOCAL_LINEAR_TREND
    controls: pd.DataFrame | None = field(default=None, repr=False)
    priors: BstsPriors = BstsPriors()
    seed: int = 0

    def __post_init__(self):
        if self.trend not in TREND_TYPES:
            raise ValidationError(f"unknown trend {self.trend!r}; expected one of {TREND_TYPES}")
        if self.controls is not None:
            if not np.all(np.isfinite(self.controls.to_numpy(dtype=float))):
                raise ValidationError("control series contain NaN or infinite values")

    @property
    def n_regressors(self) -> int:
        return 0 if self.controls is None else self.controls.shape[1]


# -- Kalman filtering -------------------------------------------------------------------

def kalman_filter(y, s2_obs: float, s2_level: float, s2_slope: float = 0.0, *,
                  trend: str = LOCAL_LEVEL, a1=None, P1=None) -> dict:
    """Kalman filter for the trend component given ``y`` (NaN = missing).

    Returns filtered means ``m`` (n x d), covariances ``P`` (n x d x d),
    one-step predicted covariances ``Ppred`` (n x d x d, for t+1 given t) and
    the Gaussian log-likelihood ``loglik``.
    """
    y = np.asarray(y, dtype=float)
    if trend == LOCAL_LEVEL:
        a = float(a1 if a1 is not None else 0.0)
        p = float(P1 if P1 is not None else 1.0)
        m, P, Ppred, ll = _filter_ll(y, s2_obs, s2_level, a, p)
        return {"m": m[:, None], "P": P[:, None, None], "Ppred": Ppred[:, None, None], "loglik": ll}
    a1 = np.zeros(2) if a1 is None else np.asarray(a1, dtype=float)
    P1 = np.diag([1.0, 0.1]) if P1 is None else np.asarray(P1, dtype=float)
    out = _filter_llt(y, s2_obs, s2_level, s2_slope, a1, P1)
    return {"m": out[0], "P": out[1], "Ppred": out[2], "loglik": out[3]}


def _filter_ll(y, s2o, s2l, a, p):
    n = len(y)
    m = np.empty(n)
    P = np.empty(n)
    Ppred = np.empty(n)
    ll = 0.0
    for t in range(n):
        yt = y[t]
        if yt == yt:
            f = p + s2o
            v = yt - a
            k = p / f
            a = a + k * v
            p = p - k * p
            ll -= 0.5 * (math.log(2.0 * math.pi * f) + v * v / f)
        m[t] = a
        P[t] = p
        p = p + s2l
        Ppred[t] = p
    return m, P, Ppred, ll


def _filter_llt(y, s2o, s2l, s2s, a1, P1):
    n = len(y)
    m = np.empty((n, 2))
    P = np.empty((n, 2, 2))
    Ppred = np.empty((n, 2, 2))
    mu, de = float(a1[0]), float(a1[1])
    p11, p12, p22 = float(P1[0, 0]), float(P1[0, 1]), float(P1[1, 1])
    ll = 0.0
    for t in range(n):
        yt = y[t]
        if yt == yt:
            f = p11 + s2o
            v = yt - mu
            k1 = p11 / f
            k2 = p12 / f
            mu += k1 * v
            de += k2 * v
            p22 -= p12 * k2
            p12 -= p11 * k2
            p11 -= p11 * k1
            ll -= 0.5 * (math.log(2.0 * math.pi * f) + v * v / f)
        m[t, 0] = mu
        m[t, 1] = de
        P[t, 0, 0] = p11
        P[t, 0, 1] = P[t, 1, 0] = p12
        P[t, 1, 1] = p22
        mu = mu + de
        p11 = p11 + 2.0 * p12 + p22 + s2l
        p12 = p12 + p22
        p22 = p22 + s2s
        Ppred[t, 0, 0] = p11
        Ppred[t, 0, 1] = Ppred[t, 1, 0] = p12
        Ppred[t, 1, 1] = p22
    return m, P, Ppred, ll


def _draw_2d(m0, m1, c11, c12, c22, z0, z1):
    l11 = math.sqrt(c11) if c11 > 0 else 0.0
    l21 = c12 / l11 if l11 > 0 else 0.0
    r = c22 - l21 * l21
    l22 = math.sqrt(r) if r > 0 else 0.0
    return m0 + l11 * z0, m1 + l21 * z0 + l22 * z1


def ffbs(y, s2_obs: float, s2_level: float, s2_slope: float = 0.0, *, trend: str = LOCAL_LEVEL,
         a1=None, P1=None, rng: np.random.Generator, filtered: dict | None = None) -> np.ndarray:
    """One joint draw of the states given ``y`` and the variances.

    Returns an ``n`` vector (local level) or ``n x 2`` array (level, slope).
    """
    kf = filtered or kalman_filter(y, s2_obs, s2_level, s2_slope, trend=trend, a1=a1, P1=P1)
    m, P, Ppred = kf["m"], kf["P"], kf["Ppred"]
    n = len(m)
    if trend == LOCAL_LEVEL:
        z = rng.standard_normal(n)
        out = np.empty(n)
        x = m[-1, 0] + math.sqrt(max(P[-1, 0, 0], 0.0)) * z[-1]
        out[-1] = x
        for t in range(n - 2, -1, -1):
            pt = P[t, 0, 0]
            c = pt / Ppred[t, 0, 0]
            mean = m[t, 0] + c * (x - m[t, 0])
            var = pt - c * pt
            x = mean + math.sqrt(var if var > 0 else 0.0) * z[t]
            out[t] = x
        return out

    z = rng.standard_normal((n, 2))
    out = np.empty((n, 2))
    mu, de = _draw_2d(m[-1, 0], m[-1, 1], P[-1, 0, 0], P[-1, 0, 1], P[-1, 1, 1], z[-1, 0], z[-1, 1])
    out[-1] = mu, de
    for t in range(n - 2, -1, -1):
        f0, f1 = m[t, 0], m[t, 1]
        p11, p12, p22 = P[t, 0, 0], P[t, 0, 1], P[t, 1, 1]
        q11, q12, q22 = Ppred[t, 0, 0], Ppred[t, 0, 1], Ppred[t, 1, 1]
        det = q11 * q22 - q12 * q12
        if not det > 0:
            det = max(det, 1e-300)
        i11, i12, i22 = q22 / det, -q12 / det, q11 / det
        # G = P T' Qpred^{-1}, with T = [[1, 1], [0, 1]]
        a11, a12 = p11 + p12, p12
        a21, a22 = p12 + p22, p22
        g11 = a11 * i11 + a12 * i12
        g12 = a11 * i12 + a12 * i22
        g21 = a21 * i11 + a22 * i12
        g22 = a21 * i12 + a22 * i22
        r0 = mu - (f0 + f1)
        r1 = de - f1
        mean0 = f0 + g11 * r0 + g12 * r1
        mean1 = f1 + g21 * r0 + g22 * r1
        # cov = P - G T P
        b11, b12 = p11 + p12, p12 + p22
        b21, b22 = p12, p22
        c11 = p11 - (g11 * b11 + g12 * b21)
        c12 = p12 - (g11 * b12 + g12 * b22)
        c22 = p22 - (g21 * b12 + g22 * b22)
        mu, de = _draw_2d(mean0, mean1, c11, c12, c22, z[t, 0], z[t, 1])
        out[t] = mu, de
    return out


# -- spike and slab ---------------------------------------------------------------------

def _quad(XtX, Xtr, idx):
    """``b' M^{-1} b`` for the regressors in ``idx``; ``None`` if singular."""
    if not idx:
        return 0.0
    M = XtX[np.ix_(idx, idx)]
    b = Xtr[idx]
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return None
    u = np.linalg.solve(L, b)
    return float(u @ u)


def _ssvs_step(X, r, gamma, s2, g, log_prior_odds, max_size, rng):
    """Update inclusion indicators one at a time, then draw beta given them."""
    XtX = X.T @ X
    Xtr = X.T @ r
    shrink = g / (1.0 + g)
    log1pg = math.log1p(g)
    J = X.shape[1]
    current = [j for j in range(J) if gamma[j]]
    q_cur = _quad(XtX, Xtr, current)
    if q_cur is None:
        current, q_cur = [], 0.0
        gamma[:] = False
    u = rng.random(J)
    for j in range(J):
        if gamma[j]:
            other = [i for i in current if i != j]
            q_in, q_out = q_cur, _quad(XtX, Xtr, other)
            if q_out is None:
                continue
        else:
            if len(current) >= max_size:
                continue
            other = current
            q_out, q_in = q_cur, _quad(XtX, Xtr, sorted(current + [j]))
            if q_in is None:
                continue
        log_odds = log_prior_odds - 0.5 * log1pg + shrink * (q_in - q_out) / (2.0 * s2)
        p_in = 1.0 / (1.0 + math.exp(-log_odds)) if log_odds > -700 else 0.0
        take = u[j] < p_in
        if take != gamma[j]:
            gamma[j] = take
            current = sorted(other + [j]) if take else other
            q_cur = q_in if take else q_out
    beta = np.zeros(J)
    if current:
        M = XtX[np.ix_(current, current)]
        L = np.linalg.cholesky(M)
        mean = shrink * np.linalg.solve(M, Xtr[current])
        z = rng.standard_normal(len(current))
        # cov = shrink * s2 * M^{-1} = (L^{-T}) (L^{-1}) * shrink * s2
        beta[current] = mean + math.sqrt(shrink * s2) * np.linalg.solve(L.T, z)
    return beta


def _inv_gamma(rng, shape, scale):
    return scale / max(rng.gamma(shape), _TINY)


# -- sampler ----------------------------------------------------------------------------

@dataclass(frozen=True)
class BstsFit:
    """Kept posterior draws (all on the standardized scale) plus standardization constants."""

    spec: StateSpaceSpec
    years: tuple[int, ...]
    y: np.ndarray
    y_mean: float
    y_sd: float
    x_mean: np.ndarray
    x_sd: np.ndarray
    regressors: tuple[str, ...]
    sigma2_obs: np.ndarray
    sigma2_level: np.ndarray
    sigma2_slope: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    last_state: np.ndarray
    fitted: np.ndarray
    n_draws: int
    burn_in: int
    n_chains: int
    ess: dict = field(default_factory=dict)
    rhat: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()

    @property
    def n_kept(self) -> int:
        return len(self.sigma2_obs)

    def inclusion_probabilities(self) -> pd.Series:
        return pd.Series(self.gamma.mean(axis=0) if self.gamma.size else np.zeros(0),
                         index=list(self.regressors), name="inclusion_probability")

    def variance_draws(self) -> dict[str, np.ndarray]:
        out = {"sigma2_obs": self.sigma2_obs, "sigma2_level": self.sigma2_level}
        if self.spec.trend == LOCAL_LINEAR_TREND:
            out["sigma2_slope"] = self.sigma2_slope
        return out

    def fitted_frame(self) -> pd.DataFrame:
        """Posterior mean and 95% band of the in-sample fit, on the original scale."""
        f = self.y_mean + self.y_sd * self.fitted
        q = np.quantile(f, [0.025, 0.5, 0.975], axis=0)
        return pd.DataFrame({"mean": f.mean(axis=0), "q025": q[0], "q50": q[1], "q975": q[2]},
                            index=pd.Index(self.years, name="year"))


def _standardize(values: np.ndarray, axis=0):
    mean = np.nanmean(values, axis=axis)
    sd = np.nanstd(values, axis=axis, ddof=1)
    sd = np.where(sd > 0, sd, 1.0)
    return mean, sd


def _run_chain(y, X, spec: StateSpaceSpec, n_draws: int, burn_in: int, rng: np.random.Generator):
    pri = spec.priors
    n = len(y)
    obs = ~np.isnan(y)
    n_obs = int(obs.sum())
    J = X.shape[1]
    llt = spec.trend == LOCAL_LINEAR_TREND
    a0 = pri.shape
    b0 = pri.scale_fraction * 1.0
    g = pri.g if pri.g is not None else float(max(n_obs, 1))
    pi = pri.pi(J)
    log_prior_odds = math.log(pi / (1.0 - pi)) if J else 0.0
    max_size = max(0, min(J, n_obs - 2))

    first = float(y[obs][0]) if n_obs else 0.0
    a1 = first if not llt else np.array([first, 0.0])
    P1 = pri.initial_level_var if not llt else np.diag([pri.initial_level_var, pri.initial_slope_var])

    s2o, s2l, s2s = 0.1, 0.01, 0.001 if llt else 0.0
    beta = np.zeros(J)
    gamma = np.zeros(J, dtype=bool)
    Xo = X[obs]
    yo = y[obs]

    keep = n_draws - burn_in
    out_s2o = np.empty(keep)
    out_s2l = np.empty(keep)
    out_s2s = np.zeros(keep)
    out_beta = np.zeros((keep, J))
    out_gamma = np.zeros((keep, J), dtype=bool)
    out_last = np.zeros((keep, 2))
    out_fit = np.empty((keep, n))

    trend = spec.trend
    for it in range(n_draws):
        xb = X @ beta if J else np.zeros(n)
        ystar = y - xb
        kf = kalman_filter(ystar, s2o, s2l, s2s, trend=trend, a1=a1, P1=P1)
        if not math.isfinite(kf["loglik"]):
            raise NumericalError(f"non-finite likelihood at iteration {it}")
        states = ffbs(ystar, s2o, s2l, s2s, trend=trend, rng=rng, filtered=kf)
        mu = states if not llt else states[:, 0]

        if J:
            beta = _ssvs_step(Xo, yo - mu[obs], gamma, s2o, g, log_prior_odds, max_size, rng)
            xb = X @ beta
        resid = yo - mu[obs] - xb[obs]
        size = int(gamma.sum())
        penalty = 0.0
        if size:
            bs = beta[gamma]
            penalty = float(bs @ (Xo[:, gamma].T @ Xo[:, gamma]) @ bs) / g
        s2o = _inv_gamma(rng, a0 + 0.5 * (n_obs + size), b0 + 0.5 * (float(resid @ resid) + penalty))
        if llt:
            de = states[:, 1]
            eta = mu[1:] - mu[:-1] - de[:-1]
            zeta = de[1:] - de[:-1]
            s2l = _inv_gamma(rng, a0 + 0.5 * (n - 1), b0 + 0.5 * float(eta @ eta))
            s2s = _inv_gamma(rng, a0 + 0.5 * (n - 1), b0 + 0.5 * float(zeta @ zeta))
        else:
            eta = mu[1:] - mu[:-1]
            s2l = _inv_gamma(rng, a0 + 0.5 * (n - 1), b0 + 0.5 * float(eta @ eta))

        k = it - burn_in
        if k >= 0:
            out_s2o[k], out_s2l[k], out_s2s[k] = s2o, s2l, s2s
            out_beta[k] = beta
            out_gamma[k] = gamma
            out_last[k, 0] = mu[-1]
            out_last[k, 1] = states[-1, 1] if llt else 0.0
            out_fit[k] = mu + xb
    return out_s2o, out_s2l, out_s2s, out_beta, out_gamma, out_last, out_fit


def fit_bsts(spec: StateSpaceSpec, y_pre: pd.Series, n_draws: int = 10_000, burn_in: int = 2_000, *,
             n_chains: int = 1) -> BstsFit:
    """Run the Gibbs sampler on the pre-period.

    Parameters
    ----------
    spec : StateSpaceSpec
    y_pre : Series indexed by year
        Treated outcome over the pre-period; NaN entries are treated as missing.
    n_draws, burn_in : int
        Iterations per chain and how many of them to discard.
    n_chains : int
        Independent chains with seeds derived from ``spec.seed``; R-hat is
        reported when there are at least two.
    """
    if n_draws <= burn_in:
        raise ValidationError(f"n_draws ({n_draws}) must exceed burn_in ({burn_in})")
    if burn_in < 0 or n_chains < 1:
        raise ValidationError("burn_in must be >= 0 and n_chains >= 1")
    years = [int(y) for y in y_pre.index]
    if len(years) < 10:
        raise ValidationError(f"BSTS needs at least 10 pre-period observations, got {len(years)}")
    yraw = y_pre.to_numpy(dtype=float)
    if np.all(np.isnan(yraw)):
        y_mean, y_sd = 0.0, 1.0
    else:
        y_mean, y_sd = (float(v) for v in _standardize(yraw))
    y = (yraw - y_mean) / y_sd

    if spec.controls is not None and spec.n_regressors:
        missing = [yr for yr in years if yr not in spec.controls.index]
        if missing:
            raise ValidationError(f"controls missing pre-period years {missing}")
        Xraw = spec.controls.loc[years].to_numpy(dtype=float)
        x_mean, x_sd = _standardize(Xraw)
        X = (Xraw - x_mean) / x_sd
        regressors = tuple(str(c) for c in spec.controls.columns)
    else:
        X = np.zeros((len(years), 0))
        x_mean = x_sd = np.zeros(0)
        regressors = ()

    chains = [_run_chain(y, X, spec, n_draws, burn_in, np.random.default_rng([spec.seed, c]))
              for c in range(n_chains)]
    s2o, s2l, s2s, beta, gamma, last, fitted = (np.concatenate([ch[i] for ch in chains]) for i in range(7))

    params = {"sigma2_obs": [c[0] for c in chains], "sigma2_level": [c[1] for c in chains]}
    if spec.trend == LOCAL_LINEAR_TREND:
        params["sigma2_slope"] = [c[2] for c in chains]
    for j, name in enumerate(regressors):
        params[f"beta[{name}]"] = [c[3][:, j] for c in chains]
    ess = {k: float(sum(effective_sample_size(x) for x in v)) for k, v in params.items()}
    rhat = {k: split_rhat(v) for k, v in params.items()} if n_chains >= 2 else {}
    warnings = [f"low effective sample size for {k}: {e:.1f}" for k, e in ess.items()
                if math.isfinite(e) and e < MIN_ESS]
    for w in warnings:
        logger.warning(w)

    return BstsFit(
        spec=spec, years=tuple(years), y=yraw, y_mean=y_mean, y_sd=y_sd, x_mean=np.asarray(x_mean),
        x_sd=np.asarray(x_sd), regressors=regressors, sigma2_obs=s2o, sigma2_level=s2l, sigma2_slope=s2s,
        beta=beta, gamma=gamma, last_state=last, fitted=fitted, n_draws=n_draws, burn_in=burn_in,
        n_chains=n_chains, ess=ess, rhat=rhat, warnings=tuple(warnings),
    )


# -- diagnostics -------------------------------------------------------------------------

def effective_sample_size(x) -> float:
    """Geyer initial-monotone-sequence ESS of a single chain (NaN for constant chains)."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return math.nan
    xc = x - x.mean()
    var = float(xc @ xc) / n
    if not var > 0:
        return math.nan
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    rho = acov / acov[0]
    m = (n - 1) // 2
    pairs = rho[0:2 * m:2] + rho[1:2 * m:2]
    total = 0.0
    prev = math.inf
    for p in pairs:
        if p <= 0:
            break
        p = min(p, prev)
        total += p
        prev = p
    tau = -1.0 + 2.0 * total
    return float(n / max(tau, 1e-12))


def split_rhat(chains: Sequence[np.ndarray]) -> float:
    """Split-chain potential scale reduction factor."""
    halves = []
    for c in chains:
        c = np.asarray(c, dtype=float)
        h = len(c) // 2
        halves += [c[:h], c[h:2 * h]]
    arr = np.vstack(halves)
    m, n = arr.shape
    if n < 2:
        return math.nan
    means = arr.mean(axis=1)
    W = arr.var(axis=1, ddof=1).mean()
    B = n * means.var(ddof=1)
    if not W > 0:
        return math.nan
    var_hat = (n - 1) / n * W + B / n
    return float(math.sqrt(var_hat / W))


# -- counterfactual ----------------------------------------------------------------------

QUANTILES = (0.025, 0.5, 0.975)


@dataclass(frozen=True)
class ImpactPosterior:
    """Posterior predictive counterfactual over the post-period.

    ``draws`` is kept-draws x post-years on the original scale; effects are
    ``actual - draw``.
    """

    years: tuple[int, ...]
    actual: pd.Series
    draws: np.ndarray
    inclusion: pd.Series
    ess: dict
    rhat: dict = field(default_factory=dict)
    warnings: tuple[str, ...] = ()
    fitted: pd.DataFrame | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.draws.ndim != 2 or self.draws.shape[1] != len(self.years) or self.draws.shape[0] == 0:
            raise ValidationError("draw matrix must be nonempty with one column per post year")
        for tab in (self.pointwise(), self.cumulative()):
            q = tab[["q025", "q50", "q975"]].to_numpy()
            if np.any(q[:, 0] > q[:, 1]) or np.any(q[:, 1] > q[:, 2]):
                raise NumericalError("posterior quantiles are not monotone")

    @property
    def effects(self) -> np.ndarray:
        return self.actual.to_numpy()[None, :] - self.draws

    def _summary(self, values: np.ndarray) -> pd.DataFrame:
        q = np.quantile(values, QUANTILES, axis=0)
        return pd.DataFrame({"mean": values.mean(axis=0), "q025": q[0], "q50": q[1], "q975": q[2]},
                            index=pd.Index(self.years, name="year"))

    def counterfactual(self) -> pd.DataFrame:
        return self._summary(self.draws)

    def pointwise(self) -> pd.DataFrame:
        return self._summary(self.effects)

    def cumulative(self) -> pd.DataFrame:
        return self._summary(np.cumsum(self.effects, axis=1))

    def prob_cumulative_negative(self) -> pd.Series:
        return pd.Series((np.cumsum(self.effects, axis=1) < 0).mean(axis=0),
                         index=pd.Index(self.years, name="year"), name="p_negative")


def predict_counterfactual(fit: BstsFit, controls_post: pd.DataFrame | None, actual_post: pd.Series,
                           *, seed: int | None = None) -> ImpactPosterior:
    """Simulate the no-intervention path for each kept draw.

    ``controls_post`` must cover every year of ``actual_post`` (ignored when
    the model has no regressors).
    """
    years = [int(y) for y in actual_post.index]
    if not years:
        raise ValidationError("empty post-period")
    H = len(years)
    J = len(fit.regressors)
    if J:
        if controls_post is None:
            raise ValidationError("model has regressors; post-period controls are required")
        missing = [y for y in years if y not in controls_post.index]
        if missing:
            raise ValidationError(f"controls missing post-period years {missing}")
        cols = [c for c in controls_post.columns]
        if tuple(str(c) for c in cols) != fit.regressors:
            raise ValidationError("post-period controls do not match the fitted regressors")
        X = (controls_post.loc[years].to_numpy(dtype=float) - fit.x_mean) / fit.x_sd
        xb = fit.beta @ X.T
    else:
        xb = np.zeros((fit.n_kept, H))

    rng = np.random.default_rng([fit.spec.seed if seed is None else seed, 1 << 20])
    D = fit.n_kept
    mu = fit.last_state[:, 0].copy()
    de = fit.last_state[:, 1].copy()
    sl = np.sqrt(fit.sigma2_level)
    ss = np.sqrt(fit.sigma2_slope)
    so = np.sqrt(fit.sigma2_obs)
    out = np.empty((D, H))
    llt = fit.spec.trend == LOCAL_LINEAR_TREND
    for h in range(H):
        z = rng.standard_normal((3, D))
        mu = mu + de + sl * z[0]
        if llt:
            de = de + ss * z[1]
        out[:, h] = mu + xb[:, h] + so * z[2]
    draws = fit.y_mean + fit.y_sd * out
    return ImpactPosterior(
        years=tuple(years), actual=actual_post.astype(float).rename("actual"), draws=draws,
        inclusion=fit.inclusion_probabilities(), ess=dict(fit.ess), rhat=dict(fit.rhat),
        warnings=fit.warnings, fitted=fit.fitted_frame(),
    )


def impact_report(posterior: ImpactPosterior) -> dict:
    """Per-year and cumulative effects with 95% intervals, as plain data."""
    pw = posterior.pointwise()
    cum = posterior.cumulative()
    cf = posterior.counterfactual()
    pneg = posterior.prob_cumulative_negative()
    years = list(posterior.years)

    def rows(tab):
        return {int(y): {c: float(tab.loc[y, c]) for c in tab.columns} for y in years}

    last = years[-1]
    return {
        "years": years,
        "n_draws": int(posterior.draws.shape[0]),
        "actual": {int(y): float(posterior.actual[y]) for y in years},
        "counterfactual": rows(cf),
        "pointwise_effect": rows(pw),
        "cumulative_effect": rows(cum),
        "p_cumulative_negative": {int(y): float(pneg[y]) for y in years},
        "final_year": {
            "year": int(last),
            "mean_gap": float(cf.loc[last, "mean"] - posterior.actual[last]),
            "actual_below_q025": bool(posterior.actual[last] < cf.loc[last, "q025"]),
            "p_cumulative_negative": float(pneg[last]),
        },
        "inclusion_probabilities": {k: float(v) for k, v in posterior.inclusion.items()},
        "ess": {k: (None if not math.isfinite(v) else float(v)) for k, v in posterior.ess.items()},
        "rhat": {k: (None if not math.isfinite(v) else float(v)) for k, v in posterior.rhat.items()},
        "warnings": list(posterior.warnings),
    }
