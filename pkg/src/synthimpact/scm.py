"""Synthetic control estimation.

Inner problem: donor weights ``w`` on the simplex minimizing the V-weighted
predictor discrepancy ``(X1 - X0 w)' diag(v) (X1 - X0 w)``.  Solved with a
primal active-set method; a pairwise Frank-Wolfe pass polishes the rare cases
where the active set stalls on a degenerate face.

Outer problem: predictor weights ``v`` on the simplex minimizing the
pre-treatment outcome MSPE of the induced ``w``.  The map ``v -> MSPE`` is only
piecewise smooth, so it is searched with Nelder-Mead over a softmax
parameterization from an equal-weights start plus seeded Dirichlet(1) starts.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.optimize import minimize

from .errors import ConvergenceError, NumericalError, ValidationError
from .panel import Panel, PredictorMatrices, PredictorSpec, YearWindow, build_predictor_matrix, window_years

logger = logging.getLogger(__name__)

SIMPLEX_TOL = 1e-8
# Table-1 style reporting precision: weights below this print as 0.000.
REPORTED_WEIGHT = 5e-4


# -- weight containers ---------------------------------------------------------

def _check_simplex(x: np.ndarray, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValidationError(f"{what}: expected a non-empty vector")
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"{what}: non-finite entries")
    if x.min() < -1e-12 or abs(x.sum() - 1.0) > SIMPLEX_TOL:
        raise NumericalError(f"{what}: not on the simplex (min={x.min():.3g}, sum={x.sum():.12g})")
    x = np.clip(x, 0.0, None)
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class DonorWeights:
    units: tuple[str, ...]
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "w", _check_simplex(self.w, "donor weights"))
        if len(self.units) != self.w.size:
            raise ValidationError("donor weights and unit list differ in length")

    def as_series(self) -> pd.Series:
        return pd.Series(np.array(self.w), index=list(self.units), name="weight")

    def positive(self, threshold: float = REPORTED_WEIGHT) -> dict[str, float]:
        return {u: float(x) for u, x in zip(self.units, self.w) if x >= threshold}


@dataclass(frozen=True)
class PredictorWeights:
    names: tuple[str, ...]
    v: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "v", _check_simplex(self.v, "predictor weights"))
        if len(self.names) != self.v.size:
            raise ValidationError("predictor weights and names differ in length")


# -- inner problem ---------------------------------------------------------------

def _check_inputs(X1, X0, v):
    X1 = np.asarray(X1, dtype=float).ravel()
    X0 = np.asarray(X0, dtype=float)
    if X0.ndim != 2 or X0.shape[0] != X1.size:
        raise ValidationError(f"shape mismatch: X1 {X1.shape}, X0 {X0.shape}")
    if X0.shape[1] < 1:
        raise ValidationError("need at least one donor")
    if not (np.all(np.isfinite(X1)) and np.all(np.isfinite(X0))):
        raise ValidationError("NaN or infinite predictor values")
    v = np.asarray(v, dtype=float).ravel()
    if v.size != X1.size:
        raise ValidationError(f"v has {v.size} entries for {X1.size} predictors")
    if not np.all(np.isfinite(v)) or v.min() < 0 or abs(v.sum() - 1.0) > SIMPLEX_TOL:
        raise ValidationError("predictor weights must lie on the simplex")
    return X1, X0, v


def inner_objective(X1, X0, v, w) -> float:
    """``(X1 - X0 w)' diag(v) (X1 - X0 w)``."""
    r = np.asarray(X1, dtype=float) - np.asarray(X0, dtype=float) @ np.asarray(w, dtype=float)
    return float(np.sum(np.asarray(v, dtype=float) * r * r))


def _affine_lstsq(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """argmin ||A z - b|| subject to sum(z) == 1 (minimum-norm in the reduced coordinates)."""
    m = A.shape[1]
    if m == 1:
        return np.ones(1)
    last = A[:, -1]
    y = np.linalg.lstsq(A[:, :-1] - last[:, None], b - last, rcond=None)[0]
    return np.append(y, 1.0 - y.sum())


def _kkt_violation(A, b, w) -> float:
    g = 2.0 * A.T @ (A @ w - b)
    support = w > 0
    return float(g[support].max() - g.min()) if support.any() else math.inf


def _active_set(A: np.ndarray, b: np.ndarray, tol: float, max_iter: int):
    J = A.shape[1]
    vertex_loss = np.sum((A - b[:, None]) ** 2, axis=0)
    free = np.zeros(J, dtype=bool)
    free[int(np.argmin(vertex_loss))] = True
    w = free.astype(float)

    for _ in range(max_iter):
        g = 2.0 * A.T @ (A @ w - b)
        scale = max(1.0, float(np.abs(g).max()))
        mu = g[free].mean()
        lam = np.where(free, np.inf, g - mu)
        j = int(np.argmin(lam))
        if lam[j] >= -tol * scale:
            return w, True
        free[j] = True

        for _ in range(J + 1):
            idx = np.flatnonzero(free)
            z = _affine_lstsq(A[:, idx], b)
            if np.all(z > 0):
                w = np.zeros(J)
                w[idx] = z
                break
            wf = w[idx]
            neg = z <= 0
            alpha = float(np.min(wf[neg] / (wf[neg] - z[neg])))
            wf = wf + alpha * (z - wf)
            keep = wf > 1e-15
            if keep.all():  # numerically stuck: drop the most negative target
                keep[np.argmin(z)] = False
            w = np.zeros(J)
            w[idx[keep]] = wf[keep]
            w /= w.sum()
            free[:] = False
            free[idx[keep]] = True
        else:
            return w, False
    return w, False


def _pairwise_frank_wolfe(A, b, w, max_iter: int, tol: float) -> np.ndarray:
    w = w.copy()
    r = A @ w - b
    for _ in range(max_iter):
        g = 2.0 * A.T @ r
        s = int(np.argmin(g))
        support = np.flatnonzero(w > 0)
        a = int(support[np.argmax(g[support])])
        gap = g[a] - g[s]
        if gap <= tol * max(1.0, float(np.abs(g).max())):
            break
        d = A[:, s] - A[:, a]
        dd = float(d @ d)
        step = w[a] if dd <= 0 else min(w[a], max(0.0, -float(d @ r) / dd))
        if step <= 0:
            break
        w[s] += step
        w[a] -= step
        r = r + step * d
    w = np.clip(w, 0.0, None)
    return w / w.sum()


def solve_inner(X1, X0, v, *, units: Sequence[str] | None = None, tol: float = 1e-12,
                max_iter: int = 500) -> DonorWeights:
    """Donor weights minimizing the V-weighted predictor discrepancy over the simplex.

    Parameters
    ----------
    X1 : (k,) array
        Treated unit predictors.
    X0 : (k, J) array
        Donor predictors, one column per donor.
    v : (k,) array
        Predictor importance weights (nonnegative, summing to one).
    units : sequence of str, optional
        Donor labels; defaults to ``"0" .. "J-1"``.

    Returns
    -------
    DonorWeights
    """
    X1, X0, v = _check_inputs(X1, X0, v)
    J = X0.shape[1]
    units = tuple(units) if units is not None else tuple(str(j) for j in range(J))
    if J == 1:
        return DonorWeights(units, np.ones(1))
    s = np.sqrt(v)
    A = X0 * s[:, None]
    b = X1 * s
    w, ok = _active_set(A, b, tol, max_iter)
    if not ok or _kkt_violation(A, b, w) > 1e-9 * max(1.0, float(np.abs(A).max()) ** 2):
        w = _pairwise_frank_wolfe(A, b, w, max_iter=20000, tol=tol)
    return DonorWeights(units, w)


# -- outer problem ---------------------------------------------------------------

@dataclass(frozen=True)
class OptimizerOptions:
    """Outer-search settings.  ``fixed_v`` skips the search entirely."""

    n_starts: int = 20
    seed: int = 0
    fatol: float = 1e-9
    xatol: float = 1e-7
    maxiter_per_dim: int = 400
    fixed_v: tuple[float, ...] | None = None

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in ("n_starts", "seed", "fatol", "xatol", "maxiter_per_dim")}
        d["fixed_v"] = list(self.fixed_v) if self.fixed_v is not None else None
        return d

    @classmethod
    def from_dict(cls, d) -> "OptimizerOptions":
        d = dict(d or {})
        if d.get("fixed_v") is not None:
            d["fixed_v"] = tuple(d["fixed_v"])
        return cls(**d)


@dataclass(frozen=True)
class StartRecord:
    index: int
    v_start: tuple[float, ...]
    v: tuple[float, ...]
    mspe: float
    nfev: int
    converged: bool

    def to_dict(self) -> dict:
        return {"index": self.index, "v_start": list(self.v_start), "v": list(self.v),
                "mspe": self.mspe, "nfev": self.nfev, "converged": self.converged}


@dataclass(frozen=True)
class NestedSolution:
    weights: DonorWeights
    vweights: PredictorWeights
    mspe: float
    baseline_mspe: float
    starts: tuple[StartRecord, ...]


def _softmax(theta: np.ndarray) -> np.ndarray:
    z = np.exp(theta - theta.max())
    return z / z.sum()


def outer_mspe(X1, X0, Z1, Z0, v) -> float:
    w = solve_inner(X1, X0, v).w
    r = np.asarray(Z1) - np.asarray(Z0) @ w
    return float(np.mean(r * r))


def solve_nested(X1, X0, Z1, Z0, opts: OptimizerOptions | None = None, *,
                 donors: Sequence[str] | None = None,
                 predictors: Sequence[str] | None = None) -> NestedSolution:
    """Choose predictor weights by minimizing pre-treatment outcome MSPE.

    Runs Nelder-Mead from the equal-weights start (index 0) and
    ``opts.n_starts`` Dirichlet(1) starts drawn from ``opts.seed``.  The best
    objective wins; ties within 1e-9 (relative) keep the earliest start.

    Raises
    ------
    ConvergenceError
        If no start converges; ``incumbent`` carries the best solution found.
    """
    opts = opts or OptimizerOptions()
    X1 = np.asarray(X1, dtype=float).ravel()
    X0 = np.asarray(X0, dtype=float)
    Z1 = np.asarray(Z1, dtype=float).ravel()
    Z0 = np.asarray(Z0, dtype=float)
    k, J = X0.shape
    if Z0.shape != (Z1.size, J):
        raise ValidationError(f"shape mismatch: Z1 {Z1.shape}, Z0 {Z0.shape}, J={J}")
    if not (np.all(np.isfinite(Z1)) and np.all(np.isfinite(Z0))):
        raise ValidationError("NaN or infinite outcome values")
    donors = tuple(donors) if donors is not None else tuple(str(j) for j in range(J))
    predictors = tuple(predictors) if predictors is not None else tuple(f"x{i}" for i in range(k))

    def mspe_at(v):
        return outer_mspe(X1, X0, Z1, Z0, v)

    equal = np.full(k, 1.0 / k)
    baseline = mspe_at(equal)

    if opts.fixed_v is not None or k == 1:
        v = np.asarray(opts.fixed_v, dtype=float) if opts.fixed_v is not None else equal
        v = v / v.sum()
        rec = StartRecord(0, tuple(v), tuple(v), mspe_at(v), 1, True)
        return NestedSolution(solve_inner(X1, X0, v, units=donors), PredictorWeights(predictors, v),
                              rec.mspe, baseline, (rec,))

    rng = np.random.default_rng(opts.seed)
    starts = [equal] + [rng.dirichlet(np.ones(k)) for _ in range(opts.n_starts)]
    records = []
    for i, v0 in enumerate(starts):
        theta0 = np.log(np.clip(v0, 1e-12, None))
        res = minimize(lambda th: mspe_at(_softmax(th)), theta0, method="Nelder-Mead",
                       options={"xatol": opts.xatol, "fatol": opts.fatol,
                                "maxiter": opts.maxiter_per_dim * k,
                                "maxfev": 2 * opts.maxiter_per_dim * k})
        v = _softmax(res.x)
        records.append(StartRecord(i, tuple(map(float, v0)), tuple(map(float, v)), float(res.fun),
                                   int(res.nfev), bool(res.success)))

    best = records[0]
    for rec in records[1:]:
        if rec.mspe < best.mspe - 1e-9 * max(1.0, abs(best.mspe)):
            best = rec
    v = np.asarray(best.v)
    sol = NestedSolution(solve_inner(X1, X0, v, units=donors), PredictorWeights(predictors, v),
                         best.mspe, baseline, tuple(records))
    if not any(r.converged for r in records):
        raise ConvergenceError(f"outer search failed to converge from {len(records)} starts", sol)
    return sol


# -- paths and diagnostics ---------------------------------------------------------

def rmspe(actual: pd.Series, synthetic: pd.Series, window: YearWindow) -> float:
    """Root mean squared difference over an inclusive year window."""
    years = window_years(window)
    try:
        a = actual.loc[years].to_numpy(dtype=float)
        s = synthetic.loc[years].to_numpy(dtype=float)
    except KeyError as exc:
        raise ValidationError(f"series not defined on window {window}: {exc}") from None
    return float(np.sqrt(np.mean((a - s) ** 2)))


def synthetic_path(weights: DonorWeights, panel: Panel, variable: str, years: Sequence[int]) -> pd.Series:
    """``sum_j w_j Y_jt`` for each year."""
    Y = panel.matrix(variable, list(weights.units), list(years))
    return pd.Series(Y @ np.asarray(weights.w), index=list(years), name="synthetic")


@dataclass(frozen=True)
class ScmFit:
    treated: str
    outcome: str
    weights: DonorWeights
    vweights: PredictorWeights
    actual: pd.Series
    synthetic: pd.Series
    gap: pd.Series
    treatment_year: int
    pre_window: YearWindow
    post_window: YearWindow
    pre_rmspe: float
    post_rmspe: float
    baseline_pre_rmspe: float
    seed: int
    starts: tuple[StartRecord, ...] = ()
    predictor_table: pd.DataFrame | None = field(default=None, repr=False)
    warnings: tuple[str, ...] = ()

    @property
    def ratio(self) -> float:
        return self.post_rmspe / self.pre_rmspe if self.pre_rmspe > 0 else math.inf

    def to_dict(self) -> dict:
        years = [int(y) for y in self.actual.index]
        d = {
            "treated": self.treated,
            "outcome": self.outcome,
            "treatment_year": self.treatment_year,
            "pre_window": list(self.pre_window),
            "post_window": list(self.post_window),
            "weights": {u: float(x) for u, x in zip(self.weights.units, self.weights.w)},
            "v": {n: float(x) for n, x in zip(self.vweights.names, self.vweights.v)},
            "years": years,
            "actual": [float(x) for x in self.actual],
            "synthetic": [float(x) for x in self.synthetic],
            "gap": [float(x) for x in self.gap],
            "pre_rmspe": self.pre_rmspe,
            "post_rmspe": self.post_rmspe,
            "baseline_pre_rmspe": self.baseline_pre_rmspe,
            "seed": self.seed,
            "optimizer": {
                "n_starts": len(self.starts),
                "converged": sum(r.converged for r in self.starts),
                "best_start": min(self.starts, key=lambda r: (r.mspe, r.index)).index if self.starts else None,
                "starts": [r.to_dict() for r in self.starts],
            },
            "warnings": list(self.warnings),
        }
        if self.predictor_table is not None:
            d["predictors"] = {
                name: {c: float(self.predictor_table.loc[name, c]) for c in self.predictor_table.columns}
                for name in self.predictor_table.index
            }
        return d

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _duplicate_warnings(X0, Z0, weights: DonorWeights) -> list[str]:
    stacked = np.vstack([X0, Z0])
    out = []
    seen = set()
    J = stacked.shape[1]
    for i in range(J):
        if i in seen:
            continue
        group = [j for j in range(i, J) if np.array_equal(stacked[:, i], stacked[:, j])]
        if len(group) > 1:
            seen.update(group)
            mass = float(sum(weights.w[j] for j in group))
            if mass > 0:
                names = [weights.units[j] for j in group]
                out.append(f"duplicate donors {names} share weight {mass:.6f}; split is not identified")
    return out


@dataclass(frozen=True)
class ScmProblem:
    """A fully specified single-treated-unit synthetic control run.

    ``post_end`` bounds the window used for post-treatment RMSPE (defaults to
    the last panel year); paths are always produced over the whole panel.
    """

    panel: Panel
    outcome: str
    treated: str
    donors: tuple[str, ...]
    predictors: tuple[PredictorSpec, ...]
    treatment_year: int
    start_year: int | None = None
    end_year: int | None = None
    post_end: int | None = None
    options: OptimizerOptions = OptimizerOptions()

    def __post_init__(self):
        object.__setattr__(self, "donors", tuple(self.donors))
        object.__setattr__(self, "predictors", tuple(self.predictors))
        if self.treated not in self.panel.units:
            raise ValidationError(f"treated unit {self.treated!r} not in panel")
        if self.treated in self.donors:
            raise ValidationError(f"treated unit {self.treated!r} is in its own donor pool")
        if len(self.donors) < 2:
            raise ValidationError(f"need at least 2 donors, got {len(self.donors)}")
        if not (self.first_year < self.treatment_year <= self.last_year):
            raise ValidationError(f"treatment year {self.treatment_year} leaves no pre-period "
                                  f"or no post-period in {self.first_year}-{self.last_year}")

    @property
    def first_year(self) -> int:
        return self.start_year if self.start_year is not None else self.panel.years[0]

    @property
    def last_year(self) -> int:
        return self.end_year if self.end_year is not None else self.panel.years[-1]

    @property
    def years(self) -> list[int]:
        return list(range(self.first_year, self.last_year + 1))

    @property
    def pre_window(self) -> YearWindow:
        return (self.first_year, self.treatment_year - 1)

    @property
    def post_window(self) -> YearWindow:
        end = self.post_end if self.post_end is not None else self.last_year
        return (self.treatment_year, end)

    def matrices(self, pre_window: YearWindow | None = None) -> PredictorMatrices:
        return build_predictor_matrix(self.panel, self.predictors, self.donors, self.treated,
                                      pre_window or self.pre_window, self.outcome)

    def replace(self, **changes) -> "ScmProblem":
        return replace(self, **changes)

    def fit(self) -> ScmFit:
        m = self.matrices()
        sol = solve_nested(m.X1, m.X0, m.Z1, m.Z0, self.options, donors=m.donors, predictors=m.predictors)
        return self.fit_from_solution(sol, m)

    def fit_with_v(self, v) -> ScmFit:
        """Fit with predictor weights held fixed."""
        return self.replace(options=replace(self.options, fixed_v=tuple(map(float, v)))).fit()

    def fit_from_solution(self, sol: NestedSolution, m: PredictorMatrices | None = None) -> ScmFit:
        m = m or self.matrices()
        years = self.years
        actual = self.panel.series(self.treated, self.outcome, years).rename("actual")
        synthetic = synthetic_path(sol.weights, self.panel, self.outcome, years)
        gap = (actual - synthetic).rename("gap")
        pre = rmspe(actual, synthetic, self.pre_window)
        post = rmspe(actual, synthetic, self.post_window)
        baseline = math.sqrt(sol.baseline_mspe)

        synth_x = m.raw_X0 @ np.asarray(sol.weights.w)
        table = pd.DataFrame({"treated": m.raw_X1, "synthetic": synth_x,
                              "sample_mean": m.raw_X0.mean(axis=1)}, index=list(m.predictors))
        warnings = _duplicate_warnings(m.X0, m.Z0, sol.weights)
        for msg in warnings:
            logger.warning(msg)
        return ScmFit(
            treated=self.treated, outcome=self.outcome, weights=sol.weights, vweights=sol.vweights,
            actual=actual, synthetic=synthetic, gap=gap, treatment_year=self.treatment_year,
            pre_window=self.pre_window, post_window=self.post_window, pre_rmspe=pre, post_rmspe=post,
            baseline_pre_rmspe=baseline, seed=self.options.seed, starts=sol.starts,
            predictor_table=table, warnings=tuple(warnings),
        )
