"""Command-line front end.

Exit status: 0 on success, 1 for invalid input or configuration, 2 for
numerical failures.
"""

from __future__ import annotations

import functools
import json
import logging
import sys
from pathlib import Path

import click

from . import pipeline
from .config import BUNDLED_CONFIGS, RunConfig, bundled_config_path, load_config
from .errors import NumericalError, SynthImpactError, ValidationError
from .oracle import DgpSpec, generate_panel, step_effect
from .panel import write_panel

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 1, 2

logger = logging.getLogger("synthimpact")


def _fail(code: int, err: Exception):
    click.echo(f"error: {type(err).__name__}: {err}", err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as e:
            _fail(EXIT_VALIDATION, e)
        except (NumericalError, SynthImpactError, ArithmeticError) as e:
            _fail(EXIT_NUMERICAL, e)
    return wrapper


def _run_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON run configuration."),
        click.option("--bundled", type=click.Choice(sorted(BUNDLED_CONFIGS)),
                     help="Start from a bundled configuration instead of a file."),
        click.option("--panel", help="Panel CSV (or 'bundled')."),
        click.option("--treated", help="Treated unit code."),
        click.option("--treatment-year", type=int, help="First treated year."),
        click.option("--seed", type=int, help="Random seed."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--jobs", type=int, help="Worker processes for placebo and jackknife fits."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def resolve_config(config_path=None, bundled=None, **flags) -> RunConfig:
    if config_path and bundled:
        raise ValidationError("give either --config or --bundled, not both")
    path = bundled_config_path(bundled) if bundled else config_path
    cfg = load_config(path)
    if path and cfg.panel != "bundled" and not Path(cfg.panel).is_absolute():
        # panel paths in a config file are relative to the file
        cfg = cfg.with_overrides(panel=str((Path(path).parent / cfg.panel).resolve()))
    if flags.get("panel") is not None:
        flags["panel"] = flags["panel"] if flags["panel"] == "bundled" else str(Path(flags["panel"]))
    return RunConfig.from_dict({**cfg.to_dict(), **{k: v for k, v in flags.items() if v is not None}})


def _prepare(**kw) -> tuple[RunConfig, Path]:
    cfg = resolve_config(**kw)
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out


def _done(files):
    for f in files:
        click.echo(str(f))


@click.group()
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
@click.version_option(package_name="synthimpact")
def cli(verbose):
    """Synthetic control, placebo inference, shortfall decomposition and BSTS impact analysis."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


@cli.command()
@_run_options
@_guarded
def fit(**kw):
    """Fit the synthetic control; write weights, paths and fit figures."""
    cfg, out = _prepare(**kw)
    _done(pipeline.write_fit(pipeline.run_fit(cfg), cfg, out))


@cli.command()
@_run_options
@_guarded
def robustness(**kw):
    """In-space and in-time placebos, p-values, jackknife and cross-validation."""
    cfg, out = _prepare(**kw)
    _done(pipeline.write_robustness(pipeline.run_robustness(cfg), cfg, out))


@cli.command()
@_run_options
@_guarded
def decompose(**kw):
    """Split the shortfall from potential into internal and external parts."""
    cfg, out = _prepare(**kw)
    _done(pipeline.write_decompose(pipeline.run_decompose(cfg), cfg, out))


@cli.command()
@_run_options
@click.option("--draws", type=int, help="MCMC iterations (overrides the config).")
@click.option("--burn-in", type=int, help="Burn-in iterations (overrides the config).")
@_guarded
def bsts(draws, burn_in, **kw):
    """Bayesian structural time-series counterfactual with donor outcomes as controls."""
    cfg = resolve_config(**kw)
    if draws is not None or burn_in is not None:
        b = cfg.to_dict()["bsts"]
        b.update({k: v for k, v in (("n_draws", draws), ("burn_in", burn_in)) if v is not None})
        cfg = RunConfig.from_dict({**cfg.to_dict(), "bsts": b})
    out = cfg.output_dir()
    out.mkdir(parents=True, exist_ok=True)
    _done(pipeline.write_bsts(pipeline.run_bsts(cfg), cfg, out))


@cli.command()
@_run_options
@_guarded
def report(**kw):
    """Run every stage and write all tables, figures and a checksum manifest."""
    cfg, out = _prepare(**kw)
    _done(pipeline.run_report(cfg, out))


@cli.command()
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON generator settings; flags below override it.")
@click.option("--n-donors", type=int)
@click.option("--n-years", type=int)
@click.option("--start-year", type=int)
@click.option("--treatment-year", type=int)
@click.option("--sigma", type=float, help="Multiplicative noise scale.")
@click.option("--effect", type=float, default=0.0, show_default=True,
              help="Relative step effect from the treatment year on (e.g. -0.05).")
@click.option("--mix", is_flag=True, help="Make the treated unit a convex mix of the first three donors.")
@click.option("--seed", type=int)
@click.option("--out", type=click.Path(file_okay=False), required=True)
@_guarded
def simulate(spec_path, effect, mix, out, **flags):
    """Write a synthetic panel with known truth and a matching run configuration."""
    base = json.loads(Path(spec_path).read_text()) if spec_path else {}
    base.update({k: v for k, v in flags.items() if v is not None})
    if mix:
        base["treated_mix"] = {1: 0.5, 2: 0.3, 3: 0.2}
    spec = DgpSpec.from_dict(base)
    if effect:
        spec = DgpSpec.from_dict({**spec.to_dict(), "effect": step_effect(spec, effect, spec.treatment_year)})
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    panel = generate_panel(spec)
    write_panel(panel, out / "panel.csv")
    (out / "dgp.json").write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n")
    cfg = simulated_config(spec, "panel.csv")
    (out / "config.json").write_text(cfg.to_json() + "\n")
    _done([out / "panel.csv", out / "dgp.json", out / "config.json"])


def simulated_config(spec: DgpSpec, panel_path: str) -> RunConfig:
    """Run configuration matching a generated panel (no population series, so per-unit decomposition)."""
    predictors = [{"variable": "y"}] + [{"variable": f"x{i + 1}"} for i in range(spec.n_factors)]
    cv = {"cv_train": None, "cv_validate": None}
    span = spec.treatment_year - spec.start_year
    if span >= 6:
        cut = spec.start_year + span // 2 - 1
        cv = {"cv_train": [spec.start_year, cut], "cv_validate": [cut + 1, spec.treatment_year - 1]}
    placebo = [y for y in (spec.start_year + span // 2,) if spec.start_year < y < spec.treatment_year]
    return RunConfig.from_dict({
        "panel": panel_path, "outcome": "y", "treated": "T00", "treatment_year": spec.treatment_year,
        "donor_pool": {"name": "simulated", "include": spec.donors},
        "predictors": predictors, "seed": spec.seed,
        "robustness": {"placebo_years": placebo, **cv},
        "decompose": {"scale_variable": None},
        "bsts": {"n_draws": 2000, "burn_in": 500},
    })


@cli.command("show-config")
@_run_options
@_guarded
def show_config(**kw):
    """Print the resolved configuration as JSON."""
    click.echo(resolve_config(**kw).to_json())


def main(argv=None):
    try:
        cli.main(args=argv, prog_name="synthimpact", standalone_mode=False)
    except click.exceptions.Abort:
        sys.exit(EXIT_VALIDATION)
    except click.ClickException as e:
        e.show()
        sys.exit(EXIT_VALIDATION)
    sys.exit(EXIT_OK)


if __name__ == "__main__":
    main()
