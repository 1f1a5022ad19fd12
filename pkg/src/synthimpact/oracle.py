"""Synthetic panels with known truth, and brute-force reference computations.

Everything here is deliberately naive: dense solves, explicit loops, exhaustive
lattice search.  The production code paths are checked against these.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ValidationError
from .panel import Panel
from .scm import DonorWeights

DEFAULT_GRID_BUDGET = 3_000_000


# -- data-generating process -----------------------------------------------------

@dataclass(frozen=True)
class DgpSpec:
    """Linear factor model with positive loadings and trending positive factors.

    ``Y_it = (lambda_i . f_t) * (1 + sigma * e_it)`` for donors.  The treated
    unit (index 0, code ``"T00"``) takes ``treated_mix``-weighted loadings of
    the listed donors when given, otherwise its own random loadings.  Effects
    apply from ``treatment_year`` on, as relative (``y *= 1 + e``) or additive
    (``y += e``) shifts.  Each unit also gets time-invariant covariates
    ``x1..xF`` equal to its loadings plus noise of scale ``covariate_noise``.
    """

    n_donors: int = 10
    n_years: int = 30
    start_year: int = 1990
    treatment_year: int = 2014
    n_factors: int = 3
    sigma: float = 0.01
    effect: Mapping[int, float] = field(default_factory=dict)
    effect_kind: str = "relative"
    treated_mix: Mapping[int, float] | None = None
    factor_growth: float = 0.03
    factor_volatility: float = 0.02
    covariate_noise: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_donors < 2 or self.n_donors + 1 < 3:
            raise ValidationError("need at least 2 donors (3 units)")
        if self.n_years < 10:
            raise ValidationError("need at least 10 years")
        if not self.start_year < self.treatment_year <= self.start_year + self.n_years - 1:
            raise ValidationError("treatment year outside the sample")
        if self.sigma < 0:
            raise ValidationError("sigma must be nonnegative")
        if self.effect_kind not in ("relative", "additive"):
            raise ValidationError(f"unknown effect kind {self.effect_kind!r}")
        eff = {int(k): float(v) for k, v in dict(self.effect).items()}
        early = [y for y, e in eff.items() if y < self.treatment_year and e != 0]
        if early:
            raise ValidationError(f"effect schedule nonzero before treatment year: {early}")
        object.__setattr__(self, "effect", eff)
        if self.treated_mix is not None:
            mix = {int(k): float(v) for k, v in dict(self.treated_mix).items()}
            if any(not 1 <= j <= self.n_donors for j in mix) or min(mix.values()) < 0:
                raise ValidationError("treated_mix must reference donors 1..n_donors with nonnegative weights")
            if abs(sum(mix.values()) - 1) > 1e-9:
                raise ValidationError("treated_mix weights must sum to one")
            object.__setattr__(self, "treated_mix", mix)

    @property
    def years(self) -> list[int]:
        return list(range(self.start_year, self.start_year + self.n_years))

    @property
    def units(self) -> list[str]:
        return [unit_code(i) for i in range(self.n_donors + 1)]

    @property
    def donors(self) -> list[str]:
        return self.units[1:]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["effect"] = {str(k): v for k, v in self.effect.items()}
        if self.treated_mix is not None:
            d["treated_mix"] = {str(k): v for k, v in self.treated_mix.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: Mapping) -> "DgpSpec":
        return cls(**dict(d))


def unit_code(i: int) -> str:
    return "T00" if i == 0 else f"D{i:02d}"


def step_effect(spec_or_years, size: float, start: int) -> dict[int, float]:
    """Constant effect ``size`` from ``start`` through the last year."""
    years = spec_or_years.years if isinstance(spec_or_years, DgpSpec) else list(spec_or_years)
    return {y: size for y in years if y >= start}


def generate_panel(spec: DgpSpec) -> Panel:
    """Draw a panel from ``spec``; reproducible given ``spec.seed``.

    Variables: ``y`` (outcome) and ``x1..xF`` (covariates).
    """
    rng = np.random.default_rng(spec.seed)
    F, T, J = spec.n_factors, spec.n_years, spec.n_donors
    steps = spec.factor_growth * rng.uniform(0.5, 1.5, size=(F, 1)) + \
        spec.factor_volatility * rng.standard_normal((F, T))
    steps[:, 0] = 0.0
    factors = 100.0 * np.exp(np.cumsum(steps, axis=1))

    loadings = rng.uniform(0.2, 1.0, size=(J + 1, F))
    if spec.treated_mix is not None:
        mix = np.zeros(J + 1)
        for j, w in spec.treated_mix.items():
            mix[j] = w
        loadings[0] = mix[1:] @ loadings[1:]

    level = loadings @ factors
    noise = rng.standard_normal((J + 1, T))
    y = level * (1.0 + spec.sigma * noise)

    years = spec.years
    for t, year in enumerate(years):
        e = spec.effect.get(year, 0.0)
        if e:
            y[0, t] = y[0, t] * (1.0 + e) if spec.effect_kind == "relative" else y[0, t] + e

    cov_noise = spec.covariate_noise * rng.standard_normal((J + 1, F))
    values = {"y": y}
    for k in range(F):
        values[f"x{k + 1}"] = np.repeat((loadings[:, k] + cov_noise[:, k])[:, None], T, axis=1)

    units = tuple(spec.units)
    return Panel(
        units=units,
        years=tuple(years),
        variables={v: ("outcome" if v == "y" else f"covariate (loading {v[1:]})") for v in values},
        values=values,
        unit_names={u: u for u in units},
        sources={v: f"simulated factor model, seed {spec.seed}" for v in values},
    )


# -- simplex lattice search ----------------------------------------------------------

def _compositions(n: int, parts: int):
    """All nonnegative integer vectors of length ``parts`` with sum <= n (as an array)."""
    if parts == 0:
        return np.zeros((1, 0), dtype=np.int64)
    out = np.arange(n + 1, dtype=np.int64)[:, None]
    for _ in range(parts - 1):
        totals = out.sum(axis=1)
        reps = n - totals + 1
        head = np.repeat(out, reps, axis=0)
        tail = np.concatenate([np.arange(r) for r in reps])
        out = np.column_stack([head, tail])
    return out


def lattice_size(J: int, resolution: float) -> int:
    n = round(1.0 / resolution)
    return math.comb(n + J - 2, J - 2) if J >= 2 else 1


def _exact_lattice(A, b, n, chunk=200_000):
    """Exact lattice argmin: enumerate the first J-2 coordinates, solve the last pair in closed form."""
    J = A.shape[1]
    if J == 1:
        return np.ones(1), float(np.sum((A[:, 0] - b) ** 2))
    d = A[:, J - 2] - A[:, J - 1]
    dd = float(d @ d)
    best_val, best_w = math.inf, None
    head_parts = J - 2
    # split on the first coordinate to bound memory
    firsts = range(n + 1) if head_parts else [None]
    for first in firsts:
        if head_parts == 0:
            heads = np.zeros((1, 0), dtype=np.int64)
        else:
            rest = _compositions(n - first, head_parts - 1)
            heads = np.column_stack([np.full(len(rest), first, dtype=np.int64), rest])
        for lo in range(0, len(heads), chunk):
            H = heads[lo:lo + chunk]
            r = n - H.sum(axis=1)
            base = (H @ A[:, :head_parts].T) / n - b + (r / n)[:, None] * A[:, J - 1]
            if dd > 0:
                a_cont = -(base @ d) / dd * n
            else:
                a_cont = np.zeros(len(H))
            cands = []
            for a in (np.floor(a_cont), np.ceil(a_cont)):
                a = np.clip(a, 0, r).astype(np.int64)
                resid = base + (a / n)[:, None] * d
                cands.append((np.einsum("ij,ij->i", resid, resid), a))
            vals = np.where(cands[0][0] <= cands[1][0], cands[0][0], cands[1][0])
            avals = np.where(cands[0][0] <= cands[1][0], cands[0][1], cands[1][1])
            i = int(np.argmin(vals))
            if vals[i] < best_val:
                best_val = float(vals[i])
                best_w = np.concatenate([H[i], [avals[i], r[i] - avals[i]]]) / n
    return best_w, best_val


def grid_oracle(X1, X0, v, resolution: float = 0.005, *, budget: int = DEFAULT_GRID_BUDGET,
                units: Sequence[str] | None = None) -> DonorWeights:
    """Simplex-lattice minimizer of ``(X1 - X0 w)' diag(v) (X1 - X0 w)``.

    The lattice is ``{w : w_j in resolution * N, sum w = 1}``.  When the lattice
    has at most ``budget`` points after eliminating the last two coordinates,
    the search is exhaustive.  Larger lattices are searched coarse-to-fine:
    an exhaustive pass on the finest lattice within budget, followed by
    exhaustive local refinements around the incumbent.
    """
    X1 = np.asarray(X1, dtype=float).ravel()
    X0 = np.asarray(X0, dtype=float)
    v = np.asarray(v, dtype=float).ravel()
    J = X0.shape[1]
    if J > 6:
        raise ValidationError(f"grid oracle limited to J <= 6 donors, got {J}")
    if not 0 < resolution <= 1.0:
        raise ValidationError("resolution must lie in (0, 1]")
    n = round(1.0 / resolution)
    if abs(n * resolution - 1.0) > 1e-9:
        raise ValidationError("resolution must divide 1")
    s = np.sqrt(v)
    A = X0 * s[:, None]
    b = X1 * s
    units = tuple(units) if units is not None else tuple(str(j) for j in range(J))

    if lattice_size(J, 1.0 / n) <= budget:
        w, _ = _exact_lattice(A, b, n)
        return DonorWeights(units, w)

    # coarse pass
    m = n
    while lattice_size(J, 1.0 / m) > budget:
        m //= 2
    w, _ = _exact_lattice(A, b, max(m, 1))
    # refine: search a local lattice of half-width `radius` coarse steps around the incumbent
    current = max(m, 1)
    while current < n:
        nxt = min(n, current * 4)
        radius = 2.0 / current
        w = _local_refine(A, b, w, nxt, radius)
        current = nxt
    return DonorWeights(units, w)


def _local_refine(A, b, center, n, radius):
    """Exhaustive search over lattice-``1/n`` points within an L-inf box around ``center``."""
    J = A.shape[1]
    lo = np.maximum(0, np.floor((center - radius) * n)).astype(int)
    hi = np.minimum(n, np.ceil((center + radius) * n)).astype(int)
    grids = [np.arange(lo[j], hi[j] + 1) for j in range(J - 1)]
    best_val, best = math.inf, center
    mesh = np.stack(np.meshgrid(*grids, indexing="ij"), axis=-1).reshape(-1, J - 1)
    last = n - mesh.sum(axis=1)
    ok = (last >= lo[J - 1]) & (last <= hi[J - 1]) & (last >= 0)
    W = np.column_stack([mesh[ok], last[ok]]) / n
    if len(W):
        R = W @ A.T - b
        vals = np.einsum("ij,ij->i", R, R)
        i = int(np.argmin(vals))
        best_val, best = vals[i], W[i]
    return best


# -- state-space references ------------------------------------------------------------

def scalar_kalman_filter(y, sigma2_eps: float, sigma2_eta: float, a1: float, p1: float):
    """Local-level Kalman filter in textbook notation.

    Model ``y_t = mu_t + eps_t``, ``mu_{t+1} = mu_t + eta_t``, ``mu_1 ~ N(a1, p1)``.
    NaN observations are skipped (prediction only).

    Returns
    -------
    dict with arrays ``a`` (predicted means), ``p`` (predicted variances),
    ``att`` and ``ptt`` (filtered), and scalar ``loglik``.
    """
    y = np.asarray(y, dtype=float)
    n = len(y)
    a = np.empty(n)
    p = np.empty(n)
    att = np.empty(n)
    ptt = np.empty(n)
    loglik = 0.0
    at, pt = float(a1), float(p1)
    for t in range(n):
        a[t], p[t] = at, pt
        if math.isnan(y[t]):
            att[t], ptt[t] = at, pt
        else:
            v = y[t] - at
            f = pt + sigma2_eps
            k = pt / f
            att[t] = at + k * v
            ptt[t] = pt * (1.0 - k)
            loglik += -0.5 * (math.log(2.0 * math.pi * f) + v * v / f)
        at = att[t]
        pt = ptt[t] + sigma2_eta
    return {"a": a, "p": p, "att": att, "ptt": ptt, "loglik": loglik}


def scalar_rts_smoother(y, sigma2_eps: float, sigma2_eta: float, a1: float, p1: float):
    """Rauch-Tung-Striebel smoothed means and variances for the local-level model."""
    kf = scalar_kalman_filter(y, sigma2_eps, sigma2_eta, a1, p1)
    att, ptt = kf["att"], kf["ptt"]
    n = len(att)
    ms = att.copy()
    ps = ptt.copy()
    for t in range(n - 2, -1, -1):
        p_pred = ptt[t] + sigma2_eta
        c = ptt[t] / p_pred
        ms[t] = att[t] + c * (ms[t + 1] - att[t])
        ps[t] = ptt[t] + c * c * (ps[t + 1] - p_pred)
    return ms, ps


# -- HP reference -------------------------------------------------------------------------

def second_difference_matrix(n: int) -> np.ndarray:
    D = np.zeros((n - 2, n))
    for i in range(n - 2):
        D[i, i:i + 3] = (1.0, -2.0, 1.0)
    return D


def dense_hp_trend(y, lamb: float) -> np.ndarray:
    """Solve ``(I + lamb D'D) tau = y`` densely."""
    y = np.asarray(y, dtype=float)
    D = second_difference_matrix(len(y))
    return np.linalg.solve(np.eye(len(y)) + lamb * D.T @ D, y)


def ols_line(y) -> np.ndarray:
    """Fitted values of ``y`` on an intercept and a linear time index."""
    y = np.asarray(y, dtype=float)
    t = np.arange(len(y), dtype=float)
    X = np.column_stack([np.ones_like(t), t])
    beta = np.linalg.lstsq(X, y, rcond=None)[0]
    return X @ beta
