"""Library-level runs behind each command, plus artifact writers.

Each ``run_*`` function returns plain result objects; each ``write_*`` function
turns them into files.  The command line only strings these together, so a
library call with the same configuration yields the same numbers.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from . import __version__, plotting
from .bsts import BstsPriors, ImpactPosterior, StateSpaceSpec, fit_bsts, impact_report, predict_counterfactual
from .config import RunConfig
from .errors import ValidationError
from .panel import Panel, window_years
from .robustness import (CrossValidation, JackknifeResult, PlaceboEnsemble, SignificanceReport, cross_validate,
                         in_space_placebos, in_time_placebo, jackknife, significance, window_rmspe)
from .scm import ScmFit, ScmProblem
from .trend import TrendDecomposition, hp_filter, shortfall_analysis

logger = logging.getLogger(__name__)


# -- serialization helpers ------------------------------------------------------------

def _clean(obj):
    """JSON-safe copy: non-finite floats become ``None``, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def provenance(cfg: RunConfig) -> dict:
    return {"package": "synthimpact", "version": __version__, "seed": cfg.seed, "config": cfg.to_dict()}


def write_json(path: Path, payload: dict, cfg: RunConfig) -> Path:
    doc = {"provenance": provenance(cfg), **payload}
    path.write_text(json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n", encoding="utf-8")
    return path


def write_csv(path: Path, frame: pd.DataFrame, cfg: RunConfig, index: bool = True) -> Path:
    """CSV with a leading ``#``-comment line carrying the provenance record."""
    header = "# provenance: " + json.dumps(_clean(provenance(cfg)), separators=(",", ":"))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header + "\n")
        frame.to_csv(fh, index=index, lineterminator="\n")
    return path


def read_csv(path) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def write_svg(path: Path, fig, cfg: RunConfig) -> Path:
    desc = json.dumps(_clean(provenance(cfg)), separators=(",", ":"))
    return plotting.save_svg(fig, path, desc)


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# -- fit ------------------------------------------------------------------------------

@dataclass(frozen=True)
class FitRun:
    panel: Panel
    problem: ScmProblem
    fit: ScmFit
    dropped: list


def run_fit(cfg: RunConfig, panel: Panel | None = None) -> FitRun:
    panel = panel if panel is not None else cfg.load_panel()
    problem, dropped = cfg.problem(panel)
    return FitRun(panel, problem, problem.fit(), dropped)


def weights_table(run: FitRun) -> pd.DataFrame:
    w = run.fit.weights
    df = pd.DataFrame({"unit": list(w.units), "country": [run.panel.name(u) for u in w.units],
                       "weight": np.asarray(w.w, dtype=float)})
    return df.sort_values(["weight", "unit"], ascending=[False, True], kind="mergesort").reset_index(drop=True)


def write_fit(run: FitRun, cfg: RunConfig, out: Path) -> list[Path]:
    fit = run.fit
    files = [
        write_csv(out / "weights.csv", weights_table(run), cfg, index=False),
        write_json(out / "fit.json", {"fit": fit.to_dict(), "dropped_donors": run.dropped}, cfg),
    ]
    if fit.predictor_table is not None:
        files.append(write_csv(out / "predictors.csv", fit.predictor_table.rename_axis("predictor"), cfg))
    label = run.panel.name(fit.treated)
    ylabel = run.panel.variables.get(fit.outcome, "") or fit.outcome
    files.append(write_svg(out / "fig8.svg", plotting.plot_fit(
        fit.actual, fit.synthetic, fit.treatment_year, treated_label=label, ylabel=ylabel), cfg))
    lamb = cfg.decompose.hp_lambda
    ta, _ = hp_filter(fit.actual, lamb)
    ts, _ = hp_filter(fit.synthetic, lamb)
    files.append(write_svg(out / "fig8_trend.svg", plotting.plot_fit(
        ta, ts, fit.treatment_year, treated_label=label, ylabel=f"{ylabel} (HP trend, lambda={lamb:g})"), cfg))
    return files


# -- robustness -------------------------------------------------------------------------

@dataclass(frozen=True)
class InTimeResult:
    year: int
    fit: ScmFit
    mean_abs_gap_placebo: float
    mean_abs_gap_post: float
    pvalues: pd.DataFrame | None

    def to_dict(self) -> dict:
        d = {
            "placebo_year": self.year,
            "weights": self.fit.weights.positive(),
            "pre_rmspe": self.fit.pre_rmspe,
            "post_rmspe": self.fit.post_rmspe,
            "placebo_window": list(self.fit.post_window),
            "mean_abs_gap_placebo_window": self.mean_abs_gap_placebo,
            "mean_abs_gap_benchmark_post": self.mean_abs_gap_post,
            "gap_ratio": self.mean_abs_gap_placebo / self.mean_abs_gap_post if self.mean_abs_gap_post else None,
        }
        if self.pvalues is not None:
            d["pvalues"] = {int(y): float(p) for y, p in self.pvalues["p_value"].items()}
        return d


@dataclass(frozen=True)
class RobustnessRun:
    base: FitRun
    ensemble: PlaceboEnsemble
    significance: SignificanceReport
    in_time: tuple[InTimeResult, ...]
    jackknife: JackknifeResult
    cv: CrossValidation | None
    cv_benchmark_rmspe: float | None


def run_in_time(base: FitRun, year: int, inference: bool, cfg: RunConfig) -> InTimeResult:
    problem, bench = base.problem, base.fit
    fit = in_time_placebo(problem, year)
    placebo_years = window_years(fit.post_window)
    post_years = window_years(bench.post_window)
    pv = None
    if inference:
        shifted = problem.replace(treatment_year=year, post_end=problem.treatment_year - 1)
        ens = in_space_placebos(shifted, cfg.robustness.filter_multiplier, treated_fit=fit, jobs=cfg.jobs)
        pv = significance(ens).pvalues
    return InTimeResult(year, fit, float(fit.gap.loc[placebo_years].abs().mean()),
                        float(bench.gap.loc[post_years].abs().mean()), pv)


def run_robustness(cfg: RunConfig, base: FitRun | None = None) -> RobustnessRun:
    base = base or run_fit(cfg)
    problem, fit = base.problem, base.fit
    r = cfg.robustness
    if len(problem.donors) < 3:
        raise ValidationError(f"jackknife needs at least 3 donors; pool has {len(problem.donors)}")
    ensemble = in_space_placebos(problem, r.filter_multiplier, treated_fit=fit, jobs=cfg.jobs)
    sig = significance(ensemble)
    in_time = tuple(run_in_time(base, y, i == 0, cfg) for i, y in enumerate(r.placebo_years))
    jk = jackknife(problem, fit, hold_v=r.jackknife_hold_v, jobs=cfg.jobs)
    cv = bench_rmspe = None
    if r.cv_train is not None:
        cv = cross_validate(problem, r.cv_train, r.cv_validate)
        bench_rmspe = window_rmspe(problem, fit.weights, r.cv_validate)
    return RobustnessRun(base, ensemble, sig, in_time, jk, cv, bench_rmspe)


def write_robustness(run: RobustnessRun, cfg: RunConfig, out: Path) -> list[Path]:
    fit = run.base.fit
    ens = run.ensemble
    files = []
    ratios = run.significance.ratios.copy()
    ratios.insert(0, "country", [run.base.panel.name(u) for u in ratios.index])
    files.append(write_csv(out / "rmspe_ratios.csv", ratios, cfg))
    files.append(write_csv(out / "pvalues.csv", run.significance.pvalues, cfg))
    files.append(write_csv(out / "placebo_gaps.csv", ens.to_long_frame(), cfg, index=False))

    p = run.significance.pvalues["p_value"].to_numpy()
    summary = {
        "mean": float(p.mean()), "min": float(p.min()), "max": float(p.max()),
        "ks_uniform": _ks_uniform(p),
    }
    jk = run.jackknife
    payload = {
        "significance": run.significance.to_dict(),
        "pvalue_summary": summary,
        "filter": {"multiplier": ens.filter_multiplier, "threshold": ens.threshold,
                   "excluded": dict(ens.excluded)},
        "in_time": [it.to_dict() for it in run.in_time],
        "jackknife": {
            "dropped": list(jk.fits),
            "max_deviation": jk.max_deviation(),
            "mean_post_gap": {k: float(v) for k, v in jk.post_gap_summary()["mean_post_gap"].items()},
            "weights": {u: f.weights.positive() for u, f in jk.fits.items()},
        },
    }
    if run.cv is not None:
        payload["cross_validation"] = {**run.cv.to_dict(), "benchmark_validation_rmspe": run.cv_benchmark_rmspe}
        files.append(write_csv(out / "cv_candidates.csv", run.cv.candidates, cfg))
    files.append(write_json(out / "robustness.json", payload, cfg))

    ylabel = run.base.panel.variables.get(fit.outcome, "") or fit.outcome
    primary = run.in_time[0] if run.in_time else None
    if primary is not None:
        files.append(write_svg(out / "figA.svg", plotting.plot_paths(
            {f"synthetic (placebo {primary.year})": primary.fit.synthetic}, fit.actual, fit.treatment_year,
            marker_year=primary.year, ylabel=ylabel), cfg))
    files.append(write_svg(out / "figB.svg", plotting.plot_gaps(
        ens.gap_matrix(), fit.treated, fit.treatment_year, excluded=tuple(ens.excluded)), cfg))
    files.append(write_svg(out / "figC.svg", plotting.plot_pvalues(run.significance.pvalues), cfg))
    paths = {"benchmark": fit.synthetic}
    paths.update({f"without {run.base.panel.name(u)}": f.synthetic for u, f in jk.fits.items()})
    files.append(write_svg(out / "figD.svg", plotting.plot_paths(
        paths, fit.actual, fit.treatment_year, ylabel=ylabel), cfg))
    return files


def _ks_uniform(p: np.ndarray) -> float:
    x = np.sort(p)
    n = len(x)
    i = np.arange(1, n + 1)
    return float(max((i / n - x).max(), (x - (i - 1) / n).max()))


# -- decomposition ----------------------------------------------------------------------

def run_decompose(cfg: RunConfig, base: FitRun | None = None) -> TrendDecomposition:
    base = base or run_fit(cfg)
    fit, panel = base.fit, base.panel
    d = cfg.decompose
    window = d.window or fit.post_window
    scale = None
    if d.scale_variable is not None:
        if d.scale_variable not in panel.variables:
            raise ValidationError(f"scale variable {d.scale_variable!r} not in panel")
        scale = panel.series(fit.treated, d.scale_variable, list(fit.actual.index))
    return shortfall_analysis(fit.actual, fit.synthetic, window, scale=scale, growth_rate=d.growth_rate,
                              anchor=d.anchor, trended=d.trended, lamb=d.hp_lambda)


def write_decompose(dec: TrendDecomposition, cfg: RunConfig, out: Path) -> list[Path]:
    files = [
        write_json(out / "decomposition.json", {"decomposition": dec.to_dict()}, cfg),
        write_csv(out / "decomposition.csv", dec.table(), cfg),
    ]
    basis = "aggregate" if cfg.decompose.scale_variable else "per unit"
    history = dec.raw_actual if not dec.trended else hp_filter(dec.raw_actual, cfg.decompose.hp_lambda)[0]
    files.append(write_svg(out / "fig9.svg", plotting.plot_decomposition(
        dec.actual, dec.synthetic, dec.potential, history=history, ylabel=f"{cfg.outcome} ({basis})"), cfg))
    files.append(write_svg(out / "fig10.svg", plotting.plot_shares(dec.table()), cfg))
    if dec.growth is not None:
        files.append(write_svg(out / "fig13.svg", plotting.plot_growth(dec.growth.to_dict()), cfg))
    return files


# -- BSTS -------------------------------------------------------------------------------

@dataclass(frozen=True)
class BstsRun:
    posterior: ImpactPosterior
    pre_years: tuple[int, ...]
    post_years: tuple[int, ...]
    controls: tuple[str, ...]
    pre_actual: pd.Series


def run_bsts(cfg: RunConfig, panel: Panel | None = None, problem: ScmProblem | None = None) -> BstsRun:
    """Fit on the pre-period with the donor outcomes as controls; predict the rest."""
    if problem is None:
        panel = panel if panel is not None else cfg.load_panel()
        problem, _ = cfg.problem(panel)
    panel = problem.panel
    b = cfg.bsts
    pre_end = b.pre_end if b.pre_end is not None else problem.treatment_year - 1
    if pre_end >= problem.last_year:
        raise ValidationError(f"bsts pre_end {pre_end} leaves no post-period")
    pre = window_years((problem.first_year, pre_end))
    post = window_years((pre_end + 1, problem.last_year))
    years = pre + post
    donors = list(problem.donors)
    controls = pd.DataFrame(panel.matrix(problem.outcome, donors, years), index=years, columns=donors)
    y = panel.series(problem.treated, problem.outcome, years)
    spec = StateSpaceSpec(trend=b.trend, controls=controls, priors=BstsPriors(expected_size=b.expected_size),
                          seed=cfg.seed)
    fit = fit_bsts(spec, y.loc[pre], b.n_draws, b.burn_in, n_chains=b.n_chains)
    posterior = predict_counterfactual(fit, controls.loc[post], y.loc[post])
    return BstsRun(posterior, tuple(pre), tuple(post), tuple(donors), y.loc[pre].rename("actual"))


def write_bsts(run: BstsRun, cfg: RunConfig, out: Path) -> list[Path]:
    post = run.posterior
    report = impact_report(post)
    report["pre_period"] = [run.pre_years[0], run.pre_years[-1]]
    report["post_period"] = [run.post_years[0], run.post_years[-1]]
    files = [write_json(out / "impact.json", {"impact": report}, cfg)]
    pw = post.pointwise().add_prefix("effect_")
    cf = post.counterfactual().add_prefix("counterfactual_")
    table = pd.concat([post.actual.rename("actual"), cf, pw], axis=1)
    table.index.name = "year"
    files.append(write_csv(out / "impact.csv", table, cfg))
    if cfg.bsts.write_draws:
        draws = pd.DataFrame(post.draws, columns=[str(y) for y in post.years])
        draws.index.name = "draw"
        files.append(write_csv(out / "counterfactual_draws.csv", draws, cfg))
    actual = pd.concat([run.pre_actual, post.actual])
    files.append(write_svg(out / "fig12.svg", plotting.plot_band(
        post.fitted, post.counterfactual(), actual, ylabel=cfg.outcome), cfg))
    return files


# -- bundle -----------------------------------------------------------------------------

def write_manifest(files: list[Path], cfg: RunConfig, out: Path, name: str = "manifest.json") -> Path:
    entries = {p.name: sha256(p) for p in sorted(files, key=lambda p: p.name)}
    return write_json(out / name, {"files": entries}, cfg)


def run_report(cfg: RunConfig, out: Path) -> list[Path]:
    """Every stage in sequence, sharing the benchmark fit; returns written files."""
    base = run_fit(cfg)
    files = write_fit(base, cfg, out)
    files += write_robustness(run_robustness(cfg, base), cfg, out)
    files += write_decompose(run_decompose(cfg, base), cfg, out)
    files += write_bsts(run_bsts(cfg, problem=base.problem), cfg, out)
    files.append(write_manifest(files, cfg, out))
    return files


def load_json(path) -> Any:
    return json.loads(Path(path).read_text(encoding="utf-8"))
