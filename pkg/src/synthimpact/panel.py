"""Country-year panel storage, validation and predictor assembly.

The canonical on-disk format is a long CSV with header ``unit,variable,year,value``.
An optional sidecar ``<stem>.meta.json`` carries the variable registry (units of
measure), display names for units, and free-form source notes.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

CANONICAL_COLUMNS = ("unit", "variable", "year", "value")

YearWindow = tuple[int, int]


def window_years(window: YearWindow) -> list[int]:
    """Inclusive ``(start, end)`` window as a list of years."""
    start, end = int(window[0]), int(window[1])
    if end < start:
        raise ValidationError(f"empty year window {window!r}")
    return list(range(start, end + 1))


@dataclass(frozen=True)
class IncompleteSeries:
    unit: str
    variable: str
    missing_years: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "unit": self.unit,
            "variable": self.variable,
            "missing_years": list(self.missing_years),
            "reason": f"{len(self.missing_years)} missing year(s)",
        }


@dataclass(frozen=True)
class Panel:
    """Immutable unit x variable x year panel.

    Missing cells are allowed only as whole-series gaps that are recorded in
    ``incomplete``; accessors never hand out NaN.  Estimators must ask for the
    window they need via :meth:`covers` / :meth:`complete_units`.
    """

    units: tuple[str, ...]
    years: tuple[int, ...]
    variables: Mapping[str, str]
    values: Mapping[str, np.ndarray] = field(repr=False)
    unit_names: Mapping[str, str] = field(default_factory=dict)
    sources: Mapping[str, str] = field(default_factory=dict, repr=False)
    incomplete: tuple[IncompleteSeries, ...] = ()

    def __post_init__(self):
        years = list(self.years)
        if not years:
            raise ValidationError("panel has no years")
        if years != list(range(years[0], years[0] + len(years))):
            raise ValidationError("panel years must be a contiguous ascending range")
        shape = (len(self.units), len(self.years))
        for name, arr in self.values.items():
            if arr.shape != shape:
                raise ValidationError(f"variable {name!r}: array shape {arr.shape} != {shape}")
            arr.setflags(write=False)

    # -- lookups -----------------------------------------------------------

    def _unit_index(self, unit: str) -> int:
        try:
            return self.units.index(unit)
        except ValueError:
            raise ValidationError(f"unit {unit!r} not in panel") from None

    def _year_slice(self, years: Sequence[int] | None) -> np.ndarray:
        if years is None:
            return np.arange(len(self.years))
        first = self.years[0]
        idx = np.asarray([int(y) - first for y in years], dtype=int)
        if idx.size and (idx.min() < 0 or idx.max() >= len(self.years)):
            raise ValidationError(f"years {years[0]}..{years[-1]} outside panel range "
                                  f"{self.years[0]}..{self.years[-1]}")
        return idx

    def _array(self, variable: str) -> np.ndarray:
        try:
            return self.values[variable]
        except KeyError:
            raise ValidationError(f"variable {variable!r} not in panel") from None

    def covers(self, unit: str, variable: str, years: Sequence[int] | None = None) -> bool:
        if unit not in self.units or variable not in self.values:
            return False
        row = self._array(variable)[self._unit_index(unit), self._year_slice(years)]
        return bool(np.all(np.isfinite(row)))

    def series(self, unit: str, variable: str, years: Sequence[int] | None = None) -> pd.Series:
        """Values for one unit/variable indexed by year.  Raises if any requested year is missing."""
        idx = self._year_slice(years)
        row = self._array(variable)[self._unit_index(unit), idx]
        if not np.all(np.isfinite(row)):
            missing = [self.years[i] for i, ok in zip(idx, np.isfinite(row)) if not ok]
            raise ValidationError(f"{unit}/{variable} missing for years {missing}")
        return pd.Series(row.copy(), index=[self.years[i] for i in idx], name=unit)

    def matrix(self, variable: str, units: Sequence[str], years: Sequence[int]) -> np.ndarray:
        """``len(years) x len(units)`` array; column order follows ``units``."""
        arr = self._array(variable)
        rows = [self._unit_index(u) for u in units]
        out = arr[np.ix_(rows, self._year_slice(years))].T.copy()
        if not np.all(np.isfinite(out)):
            bad = [units[j] for j in range(len(units)) if not np.all(np.isfinite(out[:, j]))]
            raise ValidationError(f"variable {variable!r} missing for unit(s) {bad}")
        return out

    def complete_units(self, variables: Iterable[str], years: Sequence[int] | None = None) -> list[str]:
        variables = list(variables)
        return [u for u in self.units if all(self.covers(u, v, years) for v in variables)]

    def name(self, unit: str) -> str:
        return self.unit_names.get(unit, unit)

    # -- conversion --------------------------------------------------------

    def to_frame(self) -> pd.DataFrame:
        """Long frame in canonical column order, sorted by unit, variable, year."""
        rows = []
        for unit in sorted(self.units):
            i = self.units.index(unit)
            for variable in sorted(self.values):
                row = self.values[variable][i]
                rows.extend(
                    (unit, variable, year, float(val))
                    for year, val in zip(self.years, row)
                    if np.isfinite(val)
                )
        return pd.DataFrame(rows, columns=list(CANONICAL_COLUMNS))

    def validation_report(self) -> dict:
        return {
            "units": len(self.units),
            "years": [self.years[0], self.years[-1]],
            "excluded": [s.to_dict() for s in self.incomplete],
        }

    def with_series(self, variable: str, frame: pd.DataFrame, label: str = "") -> "Panel":
        """Copy with ``variable`` set from a ``years x units`` frame (used for derived series)."""
        arr = np.full((len(self.units), len(self.years)), np.nan)
        for unit in frame.columns:
            i = self._unit_index(unit)
            idx = self._year_slice(list(frame.index))
            arr[i, idx] = frame[unit].to_numpy(dtype=float)
        values = dict(self.values)
        values[variable] = arr
        variables = dict(self.variables)
        variables[variable] = label
        return Panel(self.units, self.years, variables, values, dict(self.unit_names),
                     dict(self.sources), _scan_incomplete(self.units, self.years, values))


def _scan_incomplete(units, years, values) -> tuple[IncompleteSeries, ...]:
    out = []
    for variable in sorted(values):
        arr = values[variable]
        for i, unit in enumerate(units):
            missing = [y for y, v in zip(years, arr[i]) if not np.isfinite(v)]
            if missing:
                out.append(IncompleteSeries(unit, variable, tuple(missing)))
    return tuple(out)


def _parse_value(text: str, line: int) -> float:
    raw = text.strip()
    if "," in raw and "." not in raw:
        raw = raw.replace(",", ".")
    try:
        value = float(raw)
    except ValueError:
        raise ParseError(f"value {text!r} is not a number", line) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", line)
    return value


def _parse_year(text: str, line: int) -> int:
    try:
        year = float(text.strip())
    except ValueError:
        raise ParseError(f"year {text!r} is not an integer", line) from None
    if not year.is_integer():
        raise ParseError(f"year {text!r} is not an integer", line)
    return int(year)


def _read_schema(schema) -> dict:
    if schema is None:
        return {}
    if isinstance(schema, (str, Path)):
        schema = json.loads(Path(schema).read_text(encoding="utf-8"))
    unknown = set(schema) - set(CANONICAL_COLUMNS) - {"delimiter"}
    if unknown:
        raise ValidationError(f"unknown schema keys {sorted(unknown)}")
    return dict(schema)


def load_panel(path, schema=None, meta=None) -> Panel:
    """Load a long-format panel file.

    Parameters
    ----------
    path : path-like
        CSV file with one ``(unit, variable, year, value)`` observation per row.
    schema : mapping or path-like, optional
        Column mapping from canonical names to the file's header names, e.g.
        ``{"unit": "iso3", "value": "obs"}``.  May also set ``"delimiter"``.
    meta : path-like, optional
        Registry sidecar.  Defaults to ``<path stem>.meta.json`` when present.

    Returns
    -------
    Panel
        Series with missing years are kept and listed in ``Panel.incomplete``;
        a warning is logged for each.
    """
    path = Path(path)
    schema = _read_schema(schema)
    columns = {c: schema.get(c, c) for c in CANONICAL_COLUMNS}
    delimiter = schema.get("delimiter", ",")

    observations: dict[tuple[str, str, int], float] = {}
    with open(path, encoding="utf-8-sig", newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = None
        for row in reader:
            if not row or row[0].startswith("#"):
                continue
            header = [h.strip() for h in row]
            break
        if header is None:
            raise ParseError(f"{path}: empty file, zero rows")
        try:
            pos = {c: header.index(name) for c, name in columns.items()}
        except ValueError as exc:
            raise ParseError(f"{path}: header {header} lacks a required column ({exc})", 1) from None

        width = len(header)
        for row in reader:
            line = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()) or row[0].startswith("#"):
                continue
            if len(row) != width:
                raise ParseError(f"expected {width} fields, got {len(row)}", line)
            unit = row[pos["unit"]].strip()
            variable = row[pos["variable"]].strip()
            if not unit or not variable:
                raise ParseError("empty unit or variable", line)
            year = _parse_year(row[pos["year"]], line)
            key = (unit, variable, year)
            if key in observations:
                raise ParseError(f"duplicate observation {key}", line)
            observations[key] = _parse_value(row[pos["value"]], line)

    if not observations:
        raise ParseError(f"{path}: no data rows, zero rows")

    meta_path = Path(meta) if meta is not None else path.with_name(path.stem + ".meta.json")
    registry = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    return _assemble(observations, registry)


def _assemble(observations, registry) -> Panel:
    units = tuple(sorted({k[0] for k in observations}))
    names = sorted({k[1] for k in observations})
    all_years = sorted({k[2] for k in observations})
    years = tuple(range(all_years[0], all_years[-1] + 1))
    uidx = {u: i for i, u in enumerate(units)}
    values = {v: np.full((len(units), len(years)), np.nan) for v in names}
    for (unit, variable, year), value in observations.items():
        values[variable][uidx[unit], year - years[0]] = value

    labels = registry.get("variables", {})
    variables = {v: labels.get(v, "") for v in names}
    incomplete = _scan_incomplete(units, years, values)
    for item in incomplete:
        logger.warning("incomplete series %s/%s: missing %s", item.unit, item.variable,
                       list(item.missing_years))
    return Panel(units, years, variables, values, dict(registry.get("unit_names", {})),
                 dict(registry.get("sources", {})), incomplete)


def write_panel(panel: Panel, path) -> None:
    """Write the canonical CSV (full float precision) plus the registry sidecar."""
    path = Path(path)
    frame = panel.to_frame()
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(CANONICAL_COLUMNS) + "\n")
        for r in frame.itertuples(index=False):
            fh.write(f"{r.unit},{r.variable},{r.year},{r.value!r}\n")
    meta = {"unit_names": dict(panel.unit_names), "variables": dict(panel.variables),
            "sources": dict(panel.sources)}
    path.with_name(path.stem + ".meta.json").write_text(json.dumps(meta, indent=2) + "\n",
                                                         encoding="utf-8")


def bundled_panel_path() -> Path:
    return Path(str(resources.files("synthimpact") / "data" / "chile_panel.csv"))


def load_bundled_panel() -> Panel:
    """The Chile 1990-2019 snapshot (23 countries) shipped with the package."""
    return load_panel(bundled_panel_path())


# -- donor pools ---------------------------------------------------------------

@dataclass(frozen=True)
class DonorPoolSpec:
    name: str
    include: tuple[str, ...]
    exclude: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "include", tuple(self.include))
        object.__setattr__(self, "exclude", tuple(self.exclude))
        overlap = set(self.include) & set(self.exclude)
        if overlap:
            raise ValidationError(f"pool {self.name!r}: units both included and excluded: {sorted(overlap)}")
        if len(set(self.include)) != len(self.include):
            raise ValidationError(f"pool {self.name!r}: duplicate units")

    def resolve(self, panel: Panel, treated: str, variables: Iterable[str],
                years: Sequence[int]) -> tuple[list[str], list[dict]]:
        """Donors usable for ``treated`` over ``years``, plus report lines for dropped ones."""
        if treated in self.include:
            raise ValidationError(f"treated unit {treated!r} appears in its own donor pool {self.name!r}")
        variables = list(variables)
        donors, dropped = [], []
        for unit in self.include:
            if unit not in panel.units:
                dropped.append({"unit": unit, "reason": "not in panel"})
                continue
            lacking = [v for v in variables if not panel.covers(unit, v, years)]
            if lacking:
                dropped.append({"unit": unit, "reason": f"incomplete series: {lacking}"})
                logger.warning("donor %s dropped from pool %s: incomplete %s", unit, self.name, lacking)
                continue
            donors.append(unit)
        return donors, dropped

    def to_dict(self) -> dict:
        return {"name": self.name, "include": list(self.include), "exclude": list(self.exclude)}

    @classmethod
    def from_dict(cls, d: Mapping) -> "DonorPoolSpec":
        return cls(d["name"], tuple(d["include"]), tuple(d.get("exclude", ())))


# Donor pools of the Chile study: group I is the Latin American pool, group II
# adds Iberian, North American and commodity-exporter comparators.
GROUP_I_EXCLUDED = ("AUS", "CAN", "CHN", "MEX", "PHL", "PRT", "ZAF", "ESP", "USA")
GROUP_II = ("ARG", "AUS", "BOL", "BRA", "CAN", "CHN", "COL", "CRI", "DOM", "ECU", "GTM",
            "HND", "MEX", "NIC", "PAN", "PER", "PHL", "PRT", "ZAF", "ESP", "USA", "URY")
GROUP_I = tuple(u for u in GROUP_II if u not in GROUP_I_EXCLUDED)

POOLS = {
    "group-I": DonorPoolSpec("group-I", GROUP_I, GROUP_I_EXCLUDED),
    "group-II": DonorPoolSpec("group-II", GROUP_II),
}


# -- predictors ----------------------------------------------------------------

@dataclass(frozen=True)
class PredictorSpec:
    """One matching covariate.

    ``aggregation="mean"`` averages over the whole pre-treatment window;
    ``aggregation="years"`` averages over the listed ``years`` only (a single
    year gives the value at that year).
    """

    variable: str
    aggregation: str = "mean"
    years: tuple[int, ...] | None = None
    standardize: bool = True

    def __post_init__(self):
        if self.aggregation not in ("mean", "years"):
            raise ValidationError(f"unknown aggregation {self.aggregation!r}")
        if self.aggregation == "years" and not self.years:
            raise ValidationError(f"predictor {self.variable!r}: aggregation 'years' needs years")
        if self.years is not None:
            object.__setattr__(self, "years", tuple(int(y) for y in self.years))

    @property
    def label(self) -> str:
        if self.aggregation == "years":
            return f"{self.variable}@{'+'.join(map(str, self.years))}"
        return self.variable

    def window(self, pre_years: Sequence[int]) -> list[int]:
        if self.aggregation == "mean":
            return list(pre_years)
        outside = [y for y in self.years if y not in pre_years]
        if outside:
            raise ValidationError(f"predictor {self.label}: years {outside} outside pre-treatment window")
        return list(self.years)

    def to_dict(self) -> dict:
        d = {"variable": self.variable, "aggregation": self.aggregation, "standardize": self.standardize}
        if self.years is not None:
            d["years"] = list(self.years)
        return d

    @classmethod
    def from_dict(cls, d) -> "PredictorSpec":
        if isinstance(d, str):
            return cls(d)
        years = d.get("years")
        return cls(d["variable"], d.get("aggregation", "mean"), tuple(years) if years else None,
                   d.get("standardize", True))


@dataclass(frozen=True)
class PredictorMatrices:
    """Inputs of the synthetic-control problem.

    ``X1``/``X0`` hold (optionally standardized) predictors, one row per
    predictor; ``Z1``/``Z0`` hold pre-treatment outcomes, one row per year.
    Columns of ``X0`` and ``Z0`` follow ``donors``.
    """

    X1: np.ndarray
    X0: np.ndarray
    Z1: np.ndarray
    Z0: np.ndarray
    predictors: tuple[str, ...]
    donors: tuple[str, ...]
    pre_years: tuple[int, ...]
    raw_X1: np.ndarray
    raw_X0: np.ndarray


def build_predictor_matrix(panel: Panel, specs: Sequence[PredictorSpec], donors: Sequence[str],
                           treated: str, pre_window: YearWindow, outcome: str) -> PredictorMatrices:
    """Aggregate predictors and pre-treatment outcomes for ``treated`` and ``donors``.

    Standardization (per predictor, if flagged) is a z-score across
    ``{treated} + donors`` with the population standard deviation.
    """
    donors = list(donors)
    if not specs:
        raise ValidationError("at least one predictor is required")
    if len(donors) < 2:
        raise ValidationError(f"need at least 2 donors, got {len(donors)}")
    if treated in donors:
        raise ValidationError(f"treated unit {treated!r} listed as a donor")
    pre_years = window_years(pre_window)
    units = [treated] + donors

    rows, raw_rows = [], []
    for spec in specs:
        years = spec.window(pre_years)
        for unit in units:
            if not panel.covers(unit, spec.variable, years):
                raise ValidationError(f"predictor {spec.variable!r} missing for unit {unit!r} "
                                      f"over {years[0]}-{years[-1]}")
        row = panel.matrix(spec.variable, units, years).mean(axis=0)
        raw_rows.append(row.copy())
        if spec.standardize:
            sd = row.std()
            if not sd > 0 or sd < 1e-12 * max(1.0, abs(row.mean())):
                raise ValidationError(f"predictor {spec.label!r} has zero variance; cannot standardize")
            row = (row - row.mean()) / sd
        rows.append(row)

    X = np.vstack(rows)
    raw = np.vstack(raw_rows)
    Z = panel.matrix(outcome, units, pre_years)
    return PredictorMatrices(
        X1=X[:, 0].copy(), X0=X[:, 1:].copy(), Z1=Z[:, 0].copy(), Z0=Z[:, 1:].copy(),
        predictors=tuple(s.label for s in specs), donors=tuple(donors), pre_years=tuple(pre_years),
        raw_X1=raw[:, 0].copy(), raw_X0=raw[:, 1:].copy(),
    )


def growth_rates(panel: Panel, unit: str, variable: str, window: YearWindow) -> pd.Series:
    """Year-on-year percent changes over an inclusive window (first year is the base)."""
    return percent_changes(panel.series(unit, variable, window_years(window)))


def percent_changes(series: pd.Series) -> pd.Series:
    """``100 * (y_t / y_{t-1} - 1)``; requires strictly positive values."""
    values = series.to_numpy(dtype=float)
    if len(values) < 2:
        raise ValidationError("growth rates need at least two observations")
    if np.any(values <= 0):
        raise ValidationError("growth undefined for nonpositive values")
    return pd.Series(100.0 * (values[1:] / values[:-1] - 1.0), index=series.index[1:], name=series.name)
