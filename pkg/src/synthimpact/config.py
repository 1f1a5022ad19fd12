"""Run configuration for the command line.

A configuration is a JSON object; command-line flags override file values,
which override the defaults below.  The resolved configuration is validated
before any computation and is written into every output file.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .panel import POOLS, DonorPoolSpec, Panel, PredictorSpec, load_bundled_panel, load_panel, window_years
from .scm import OptimizerOptions, ScmProblem
from .trend import HP_LAMBDA_ANNUAL, POTENTIAL_GROWTH

OUT_ENV = "SYNTHIMPACT_OUT"
BUNDLED = "bundled"
BUNDLED_CONFIGS = {"chile-group-II": "chile_group2.json", "chile-group-I": "chile_group1.json"}


def _window(value, what: str) -> tuple[int, int] | None:
    if value is None:
        return None
    try:
        a, b = (int(x) for x in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{what} must be a pair of years, got {value!r}") from None
    if a > b:
        raise ValidationError(f"{what} {a}-{b} is empty")
    return (a, b)


@dataclass(frozen=True)
class RobustnessConfig:
    placebo_years: tuple[int, ...] = (2006, 2000, 2005, 2008)
    filter_multiplier: float = 5.0
    cv_train: tuple[int, int] | None = (1990, 1998)
    cv_validate: tuple[int, int] | None = (1999, 2013)
    jackknife_hold_v: bool = False

    def __post_init__(self):
        object.__setattr__(self, "placebo_years", tuple(int(y) for y in self.placebo_years))
        object.__setattr__(self, "cv_train", _window(self.cv_train, "cv_train"))
        object.__setattr__(self, "cv_validate", _window(self.cv_validate, "cv_validate"))
        if not self.filter_multiplier > 0:
            raise ValidationError("filter_multiplier must be positive")
        if (self.cv_train is None) != (self.cv_validate is None):
            raise ValidationError("cv_train and cv_validate must be given together")


@dataclass(frozen=True)
class DecomposeConfig:
    hp_lambda: float = HP_LAMBDA_ANNUAL
    growth_rate: float = POTENTIAL_GROWTH
    window: tuple[int, int] | None = None
    scale_variable: str | None = "population"
    anchor: str = "actual"
    trended: bool = False

    def __post_init__(self):
        object.__setattr__(self, "window", _window(self.window, "decomposition window"))
        if not self.hp_lambda > 0:
            raise ValidationError("hp_lambda must be positive")
        if self.anchor not in ("actual", "trend"):
            raise ValidationError(f"anchor must be 'actual' or 'trend', got {self.anchor!r}")


@dataclass(frozen=True)
class BstsConfig:
    trend: str = "local_linear_trend"
    n_draws: int = 10_000
    burn_in: int = 2_000
    n_chains: int = 1
    pre_end: int | None = None
    expected_size: float = 3.0
    write_draws: bool = False

    def __post_init__(self):
        if self.n_draws <= self.burn_in:
            raise ValidationError(f"bsts n_draws ({self.n_draws}) must exceed burn_in ({self.burn_in})")
        if self.burn_in < 0 or self.n_chains < 1:
            raise ValidationError("bsts burn_in must be >= 0 and n_chains >= 1")
        if self.trend not in ("local_level", "local_linear_trend"):
            raise ValidationError(f"unknown bsts trend {self.trend!r}")
        if not self.expected_size > 0:
            raise ValidationError("bsts expected_size must be positive")


_SECTIONS = {"robustness": RobustnessConfig, "decompose": DecomposeConfig, "bsts": BstsConfig}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs, in serializable form.

    ``panel`` is a CSV path or ``"bundled"``; ``donor_pool`` is a named pool
    or an explicit :class:`DonorPoolSpec`.
    """

    panel: str = BUNDLED
    outcome: str = "gdp_pc"
    treated: str = "CHL"
    treatment_year: int = 2014
    donor_pool: DonorPoolSpec = POOLS["group-II"]
    predictors: tuple[PredictorSpec, ...] = (
        PredictorSpec("gdp_pc"), PredictorSpec("population_growth"), PredictorSpec("life_expectancy"))
    start_year: int | None = None
    end_year: int | None = None
    n_starts: int = 20
    seed: int = 0
    out: str | None = None
    jobs: int = 1
    robustness: RobustnessConfig = RobustnessConfig()
    decompose: DecomposeConfig = DecomposeConfig()
    bsts: BstsConfig = BstsConfig()

    def __post_init__(self):
        if not self.predictors:
            raise ValidationError("at least one predictor is required")
        if self.jobs < 1:
            raise ValidationError("jobs must be >= 1")
        if self.n_starts < 0:
            raise ValidationError("n_starts must be >= 0")
        if self.start_year is not None and self.start_year >= self.treatment_year:
            raise ValidationError("start_year must precede the treatment year")
        if self.end_year is not None and self.end_year < self.treatment_year:
            raise ValidationError("end_year must not precede the treatment year")
        pre = (self.start_year, self.treatment_year - 1)
        for p in self.predictors:
            if p.years and (max(p.years) >= self.treatment_year or
                            (pre[0] is not None and min(p.years) < pre[0])):
                raise ValidationError(f"predictor {p.label} years fall outside the pre-treatment window")
        r = self.robustness
        for y in r.placebo_years:
            if y >= self.treatment_year or (self.start_year is not None and y <= self.start_year):
                raise ValidationError(f"placebo year {y} is not inside the pre-treatment window")
        if r.cv_validate is not None and r.cv_validate[1] >= self.treatment_year:
            raise ValidationError("cross-validation window must end before the treatment year")
        d = self.decompose
        if d.window is not None and d.window[0] != self.treatment_year:
            raise ValidationError("decomposition window must start at the treatment year")
        b = self.bsts
        if b.pre_end is not None and b.pre_end < self.treatment_year - 1:
            raise ValidationError("bsts pre_end must not precede the last pre-treatment year")

    # -- serialization --------------------------------------------------------------

    def to_dict(self) -> dict:
        d = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "donor_pool":
                value = value.to_dict()
            elif f.name == "predictors":
                value = [p.to_dict() for p in value]
            elif f.name in _SECTIONS:
                value = {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(value).items()}
            d[f.name] = value
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValidationError(f"unknown configuration keys: {unknown}")
        kw = dict(d)
        if "donor_pool" in kw:
            kw["donor_pool"] = _pool(kw["donor_pool"])
        if "predictors" in kw:
            try:
                kw["predictors"] = tuple(PredictorSpec.from_dict(p) for p in kw["predictors"])
            except (KeyError, TypeError) as e:
                raise ValidationError(f"malformed predictor entry: {e}") from None
        for name, section in _SECTIONS.items():
            if name in kw:
                kw[name] = _section(section, kw[name], name)
        try:
            return cls(**kw)
        except TypeError as e:
            raise ValidationError(f"malformed configuration: {e}") from None

    def with_overrides(self, **overrides) -> "RunConfig":
        """Apply non-``None`` overrides (command-line flags)."""
        changes = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **changes) if changes else self

    # -- resolution -----------------------------------------------------------------

    def load_panel(self) -> Panel:
        return load_bundled_panel() if self.panel == BUNDLED else load_panel(self.panel)

    def output_dir(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV) or "synthimpact-out")

    def options(self) -> OptimizerOptions:
        return OptimizerOptions(n_starts=self.n_starts, seed=self.seed)

    def problem(self, panel: Panel) -> tuple[ScmProblem, list[dict]]:
        """Build the synthetic control problem; also returns dropped-donor report lines."""
        if self.treated not in panel.units:
            raise ValidationError(f"treated unit {self.treated!r} not in panel")
        for var in {self.outcome, *(p.variable for p in self.predictors)}:
            if var not in panel.variables:
                raise ValidationError(f"variable {var!r} not in panel")
        first = self.start_year if self.start_year is not None else panel.years[0]
        last = self.end_year if self.end_year is not None else panel.years[-1]
        years = window_years((first, last))
        variables = {self.outcome, *(p.variable for p in self.predictors)}
        if not panel.covers(self.treated, self.outcome, years):
            raise ValidationError(f"outcome {self.outcome!r} incomplete for {self.treated} over {first}-{last}")
        donors, dropped = self.donor_pool.resolve(panel, self.treated, sorted(variables), years)
        problem = ScmProblem(panel, self.outcome, self.treated, tuple(donors), self.predictors,
                             self.treatment_year, self.start_year, self.end_year, options=self.options())
        return problem, dropped


def _pool(value) -> DonorPoolSpec:
    if isinstance(value, DonorPoolSpec):
        return value
    if isinstance(value, str):
        if value not in POOLS:
            raise ValidationError(f"unknown donor pool {value!r}; known: {sorted(POOLS)}")
        return POOLS[value]
    try:
        return DonorPoolSpec.from_dict(value)
    except (KeyError, TypeError) as e:
        raise ValidationError(f"malformed donor pool: {e}") from None


def _section(cls, value, name):
    if isinstance(value, cls):
        return value
    if not isinstance(value, Mapping):
        raise ValidationError(f"section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ValidationError(f"unknown keys in {name!r}: {unknown}")
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in value.items()}
    return cls(**kw)


def load_config(path=None, **overrides) -> RunConfig:
    """Read a JSON config (or start from defaults) and apply flag overrides."""
    if path is None:
        base = {}
    else:
        try:
            base = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ValidationError(f"config {path} is not valid JSON: {e}") from None
        if not isinstance(base, dict):
            raise ValidationError("config must be a JSON object")
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(base)


def bundled_config_path(name: str) -> Path:
    if name not in BUNDLED_CONFIGS:
        raise ValidationError(f"unknown bundled config {name!r}; known: {sorted(BUNDLED_CONFIGS)}")
    return Path(str(resources.files("synthimpact") / "data" / BUNDLED_CONFIGS[name]))


def bundled_config(name: str = "chile-group-II") -> RunConfig:
    return load_config(bundled_config_path(name))
