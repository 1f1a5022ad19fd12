"""Placebo inference and sensitivity checks for a synthetic control fit.

All re-estimations reuse the original problem's predictor specification,
outcome and window conventions; only the treated unit, the treatment year or
the donor pool change.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ValidationError
from .panel import YearWindow, window_years
from .scm import (REPORTED_WEIGHT, DonorWeights, NestedSolution, PredictorWeights, ScmFit, ScmProblem,
                  rmspe, solve_inner, solve_nested, synthetic_path)

logger = logging.getLogger(__name__)

DEFAULT_FILTER_MULTIPLIER = 5.0
DEFAULT_PLACEBO_YEARS = (2006, 2000, 2005, 2008)


def _fit(problem: ScmProblem) -> ScmFit:
    return problem.fit()


def _run_all(problems: Sequence[ScmProblem], jobs: int) -> list[ScmFit]:
    """Fit each problem; results come back in input order regardless of ``jobs``."""
    if jobs <= 1 or len(problems) <= 1:
        return [p.fit() for p in problems]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_fit, problems))


# -- in-time placebo ------------------------------------------------------------------

def in_time_placebo(problem: ScmProblem, placebo_year: int) -> ScmFit:
    """Re-estimate with the intervention moved back to ``placebo_year``.

    The post-placebo RMSPE window ends the year before the real treatment so
    the real effect does not leak into placebo diagnostics; paths still cover
    the whole sample.
    """
    if not problem.first_year < placebo_year < problem.treatment_year:
        raise ValidationError(f"placebo year {placebo_year} must lie strictly inside the pre-treatment "
                              f"window {problem.first_year}-{problem.treatment_year - 1} "
                              f"and leave at least one pre-placebo year")
    return problem.replace(treatment_year=placebo_year, post_end=problem.treatment_year - 1).fit()


# -- in-space placebos ------------------------------------------------------------------

@dataclass(frozen=True)
class PlaceboEnsemble:
    """Treated fit plus one placebo fit per donor.

    ``excluded`` maps filtered units to their pre-RMSPE; they are kept in
    ``fits`` for plotting but take no part in inference.
    """

    treated_fit: ScmFit
    fits: Mapping[str, ScmFit]
    filter_multiplier: float
    threshold: float
    excluded: Mapping[str, float] = field(default_factory=dict)

    @property
    def surviving(self) -> list[str]:
        return [u for u in self.fits if u not in self.excluded]

    def gap_matrix(self, surviving_only: bool = False) -> pd.DataFrame:
        """Years x units, treated unit first."""
        cols = {self.treated_fit.treated: self.treated_fit.gap}
        for u in (self.surviving if surviving_only else self.fits):
            cols[u] = self.fits[u].gap
        return pd.DataFrame(cols)

    def to_long_frame(self) -> pd.DataFrame:
        rows = []
        for unit, fit in [(self.treated_fit.treated, self.treated_fit), *self.fits.items()]:
            role = "treated" if fit is self.treated_fit else ("excluded" if unit in self.excluded else "placebo")
            for year, gap in fit.gap.items():
                rows.append((unit, role, int(year), float(fit.actual[year]), float(fit.synthetic[year]), float(gap)))
        return pd.DataFrame(rows, columns=["unit", "role", "year", "actual", "synthetic", "gap"])


def placebo_problem(problem: ScmProblem, unit: str) -> ScmProblem:
    """``problem`` with ``unit`` treated and the real treated unit moved into the pool."""
    if unit not in problem.donors:
        raise ValidationError(f"{unit!r} is not a donor")
    donors = tuple(u for u in problem.donors if u != unit) + (problem.treated,)
    return problem.replace(treated=unit, donors=donors)


def in_space_placebos(problem: ScmProblem, filter_multiplier: float = DEFAULT_FILTER_MULTIPLIER, *,
                      treated_fit: ScmFit | None = None, jobs: int = 1) -> PlaceboEnsemble:
    """Reassign treatment to each donor in turn.

    Placebos whose pre-RMSPE exceeds ``filter_multiplier`` times the treated
    unit's are listed in ``excluded``.

    Raises
    ------
    ValidationError
        If fewer than two placebos survive the filter.
    """
    if not filter_multiplier > 0:
        raise ValidationError("filter_multiplier must be positive")
    treated_fit = treated_fit or problem.fit()
    units = sorted(problem.donors)
    fits = dict(zip(units, _run_all([placebo_problem(problem, u) for u in units], jobs)))
    threshold = filter_multiplier * treated_fit.pre_rmspe
    excluded = {u: f.pre_rmspe for u, f in fits.items() if f.pre_rmspe > threshold}
    if len(fits) - len(excluded) < 2:
        raise ValidationError(f"only {len(fits) - len(excluded)} placebo(s) survive the pre-fit filter "
                              f"(threshold {threshold:.6g}); inference impossible")
    for u, r in excluded.items():
        logger.info("placebo %s excluded: pre-RMSPE %.6g > %.6g", u, r, threshold)
    return PlaceboEnsemble(treated_fit, fits, float(filter_multiplier), float(threshold), excluded)


# -- significance ------------------------------------------------------------------------

def rmspe_ratios(ensemble: PlaceboEnsemble) -> pd.DataFrame:
    """Post/pre RMSPE ratio for the treated unit and every placebo.

    Columns: ``pre_rmspe``, ``post_rmspe``, ``ratio``, ``role``, ``rank``.
    Ranks (1 = largest ratio) cover the treated unit and surviving placebos
    with a defined ratio; units with zero pre-RMSPE get ``NaN`` and a warning.
    """
    tf = ensemble.treated_fit
    rows = []
    for unit, fit in [(tf.treated, tf), *ensemble.fits.items()]:
        role = "treated" if fit is tf else ("excluded" if unit in ensemble.excluded else "placebo")
        if fit.pre_rmspe > 0:
            ratio = fit.post_rmspe / fit.pre_rmspe
        else:
            ratio = math.nan
            logger.warning("RMSPE ratio undefined for %s (zero pre-treatment RMSPE)", unit)
        rows.append((unit, fit.pre_rmspe, fit.post_rmspe, ratio, role))
    df = pd.DataFrame(rows, columns=["unit", "pre_rmspe", "post_rmspe", "ratio", "role"]).set_index("unit")
    ranked = df[(df.role != "excluded") & df.ratio.notna()]
    df["rank"] = ranked.ratio.rank(ascending=False, method="min").astype("Int64")
    order = df.sort_values(["ratio"], ascending=False, kind="mergesort", na_position="last")
    return order


def pvalues(ensemble: PlaceboEnsemble) -> pd.DataFrame:
    """Per-year permutation p-values over the treated post-treatment window.

    ``p_t = (1 + #{u : |gap_u,t| >= |gap_treated,t|}) / (1 + N)`` over the N
    surviving placebos.  ``bar`` is the treated gap minus the mean placebo gap.
    """
    tf = ensemble.treated_fit
    surviving = ensemble.surviving
    if len(surviving) < 2:
        raise ValidationError("need at least two surviving placebos")
    years = window_years(tf.post_window)
    G = np.column_stack([ensemble.fits[u].gap.loc[years].to_numpy() for u in surviving])
    g = tf.gap.loc[years].to_numpy()
    scale = max(1.0, float(np.abs(tf.actual).max()))
    atol = 1e-10 * scale
    count = (np.abs(G) >= (np.abs(g) - atol)[:, None]).sum(axis=1)
    n = len(surviving)
    mean_placebo = G.mean(axis=1)
    return pd.DataFrame({
        "gap": g,
        "mean_placebo_gap": mean_placebo,
        "bar": g - mean_placebo,
        "p_value": (1.0 + count) / (1.0 + n),
    }, index=pd.Index(years, name="year"))


@dataclass(frozen=True)
class SignificanceReport:
    pvalues: pd.DataFrame
    ratios: pd.DataFrame
    treated_rank: int
    n_placebos: int

    def to_dict(self) -> dict:
        return {
            "treated_rank": self.treated_rank,
            "n_ranked": int(self.ratios["rank"].notna().sum()),
            "n_placebos": self.n_placebos,
            "pvalues": {int(y): float(p) for y, p in self.pvalues["p_value"].items()},
            "bars": {int(y): float(b) for y, b in self.pvalues["bar"].items()},
            "ratios": {u: {"ratio": (None if math.isnan(r.ratio) else float(r.ratio)), "role": r.role,
                           "rank": (None if pd.isna(r["rank"]) else int(r["rank"]))}
                       for u, r in self.ratios.iterrows()},
        }


def significance(ensemble: PlaceboEnsemble) -> SignificanceReport:
    ratios = rmspe_ratios(ensemble)
    rank = ratios.loc[ensemble.treated_fit.treated, "rank"]
    return SignificanceReport(pvalues(ensemble), ratios, int(rank) if not pd.isna(rank) else -1,
                              len(ensemble.surviving))


# -- jackknife --------------------------------------------------------------------------

@dataclass(frozen=True)
class JackknifeResult:
    benchmark: ScmFit
    fits: Mapping[str, ScmFit]

    def max_deviation(self) -> dict[str, float]:
        """Largest absolute difference from the benchmark synthetic path, per dropped unit."""
        base = self.benchmark.synthetic
        return {u: float((f.synthetic - base).abs().max()) for u, f in self.fits.items()}

    def post_gap_summary(self) -> pd.DataFrame:
        years = window_years(self.benchmark.post_window)
        rows = {"benchmark": self.benchmark.gap.loc[years].mean()}
        rows.update({u: f.gap.loc[years].mean() for u, f in self.fits.items()})
        return pd.Series(rows, name="mean_post_gap").to_frame()


def jackknife(problem: ScmProblem, benchmark: ScmFit | None = None, *, units: Sequence[str] | None = None,
              hold_v: bool = False, threshold: float = REPORTED_WEIGHT, jobs: int = 1) -> JackknifeResult:
    """Leave out each positively weighted donor and re-estimate.

    ``units`` overrides the donors to drop.  With ``hold_v`` the benchmark
    predictor weights are kept fixed, so only the inner problem is re-solved.
    """
    benchmark = benchmark or problem.fit()
    drop = list(units) if units is not None else list(benchmark.weights.positive(threshold))
    if len(problem.donors) - 1 < 2:
        raise ValidationError(f"jackknife needs at least 3 donors; pool has {len(problem.donors)}")
    problems = []
    for u in drop:
        if u not in problem.donors:
            raise ValidationError(f"{u!r} is not a donor")
        reduced = problem.replace(donors=tuple(d for d in problem.donors if d != u))
        if hold_v:
            reduced = reduced.replace(options=replace(problem.options,
                                                      fixed_v=tuple(map(float, benchmark.vweights.v))))
        problems.append(reduced)
    return JackknifeResult(benchmark, dict(zip(drop, _run_all(problems, jobs))))


# -- cross-validation ------------------------------------------------------------------------

@dataclass(frozen=True)
class CrossValidation:
    weights: DonorWeights
    vweights: PredictorWeights
    validation_rmspe: float
    train_rmspe: float
    train: YearWindow
    validate: YearWindow
    candidates: pd.DataFrame
    chosen: int
    fit: ScmFit

    def to_dict(self) -> dict:
        return {
            "train": list(self.train),
            "validate": list(self.validate),
            "weights": {u: float(w) for u, w in zip(self.weights.units, self.weights.w)},
            "v": {n: float(x) for n, x in zip(self.vweights.names, self.vweights.v)},
            "validation_rmspe": self.validation_rmspe,
            "train_rmspe": self.train_rmspe,
            "chosen_start": self.chosen,
        }


def cross_validate(problem: ScmProblem, train: YearWindow, validate: YearWindow) -> CrossValidation:
    """Pick predictor weights by out-of-sample fit.

    The outer search runs with predictors and outcomes over ``train``; each
    multistart incumbent ``v`` then gives donor weights whose outcome RMSPE is
    measured on ``validate``.  The candidate with the smallest validation
    RMSPE wins (ties keep the lower start index).
    """
    pre = window_years(problem.pre_window)
    tr, va = window_years(train), window_years(validate)
    if not tr or not va:
        raise ValidationError("empty training or validation window")
    if set(tr) & set(va):
        raise ValidationError(f"training {train} and validation {validate} windows overlap")
    if tr[-1] >= va[0]:
        raise ValidationError("training window must precede the validation window")
    if not set(tr) | set(va) <= set(pre):
        raise ValidationError(f"windows must lie inside the pre-treatment years {pre[0]}-{pre[-1]}")

    m = problem.matrices(pre_window=train)
    sol = solve_nested(m.X1, m.X0, m.Z1, m.Z0, problem.options, donors=m.donors, predictors=m.predictors)
    actual = problem.panel.series(problem.treated, problem.outcome, va)

    rows = []
    best = None
    for rec in sol.starts:
        w = solve_inner(m.X1, m.X0, np.asarray(rec.v), units=m.donors)
        synth = synthetic_path(w, problem.panel, problem.outcome, va)
        val = rmspe(actual, synth, validate)
        rows.append({"start": rec.index, "train_mspe": rec.mspe, "validation_rmspe": val,
                     **{f"v[{n}]": x for n, x in zip(m.predictors, rec.v)}})
        if best is None or val < best[0] - 1e-9 * max(1.0, best[0]):
            best = (val, rec, w)
    val, rec, w = best
    v = PredictorWeights(m.predictors, np.asarray(rec.v))
    chosen = NestedSolution(w, v, rec.mspe, sol.baseline_mspe, sol.starts)
    fit = problem.fit_from_solution(chosen)
    return CrossValidation(
        weights=w, vweights=v, validation_rmspe=float(val), train_rmspe=math.sqrt(rec.mspe),
        train=tuple(train), validate=tuple(validate),
        candidates=pd.DataFrame(rows).set_index("start"), chosen=rec.index, fit=fit,
    )


def window_rmspe(problem: ScmProblem, weights: DonorWeights, window: YearWindow) -> float:
    """Outcome RMSPE of arbitrary donor weights over ``window``."""
    years = window_years(window)
    actual = problem.panel.series(problem.treated, problem.outcome, years)
    return rmspe(actual, synthetic_path(weights, problem.panel, problem.outcome, years), window)
