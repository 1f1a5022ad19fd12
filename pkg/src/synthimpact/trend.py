"""Trend extraction and shortfall decomposition against a potential-output path."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from scipy.linalg import solveh_banded

from .errors import NumericalError, ValidationError
from .panel import YearWindow, percent_changes, window_years

logger = logging.getLogger(__name__)

HP_LAMBDA_ANNUAL = 100.0
POTENTIAL_GROWTH = 4.5


def hp_filter(series: pd.Series | np.ndarray, lamb: float = HP_LAMBDA_ANNUAL):
    """Hodrick-Prescott decomposition.

    The trend solves ``(I + lamb D'D) tau = y`` with ``D`` the second-difference
    operator.  Internally the equivalent banded system
    ``(I + lamb D D') u = D y`` is solved, and ``cycle = lamb D' u``; this
    stays well conditioned as ``lamb`` grows, where the primal system does not.

    Parameters
    ----------
    series : Series or array, length >= 4
    lamb : float
        Smoothing parameter (100 for annual data).

    Returns
    -------
    trend, cycle
        Same type and index as the input.
    """
    y = np.asarray(series, dtype=float)
    n = y.size
    if y.ndim != 1 or n < 4:
        raise ValidationError(f"HP filter needs a 1-d series of length >= 4, got shape {y.shape}")
    if not lamb > 0 or not math.isfinite(lamb):
        raise ValidationError("lambda must be positive and finite")
    if not np.all(np.isfinite(y)):
        raise ValidationError("HP filter input contains NaN or infinite values")

    dy = y[2:] - 2.0 * y[1:-1] + y[:-2]
    m = n - 2
    ab = np.zeros((3, m))
    ab[0, 2:] = lamb
    ab[1, 1:] = -4.0 * lamb
    ab[2, :] = 1.0 + 6.0 * lamb
    u = solveh_banded(ab, dy)
    cycle = np.zeros(n)
    cycle[:-2] += u
    cycle[1:-1] -= 2.0 * u
    cycle[2:] += u
    cycle *= lamb
    trend = y - cycle
    if isinstance(series, pd.Series):
        return (pd.Series(trend, index=series.index, name=series.name),
                pd.Series(cycle, index=series.index, name=series.name))
    return trend, cycle


def potential_path(anchor_year: int, anchor_value: float, growth_rate: float = POTENTIAL_GROWTH,
                   end_year: int | None = None, years=None) -> pd.Series:
    """Geometric path ``anchor_value * (1 + g/100)^(t - anchor_year)`` for ``t >= anchor_year``."""
    if not math.isfinite(growth_rate):
        raise ValidationError("growth rate must be finite")
    if years is None:
        years = range(anchor_year, (end_year if end_year is not None else anchor_year) + 1)
    years = [int(y) for y in years]
    if any(y < anchor_year for y in years):
        raise ValidationError("potential path is defined from the anchor year onward")
    g = 1.0 + growth_rate / 100.0
    return pd.Series([anchor_value * g ** (y - anchor_year) for y in years], index=years, name="potential")


@dataclass(frozen=True)
class TrendDecomposition:
    """Per-year and period split of the shortfall from potential.

    ``internal = synthetic - actual`` and ``external = potential - synthetic``
    sum to ``total = potential - actual``.  Years with ``total <= 0`` are
    flagged and left out of period averages; their per-year shares are still
    reported (``NaN`` when ``total == 0``).
    """

    years: tuple[int, ...]
    actual: pd.Series
    synthetic: pd.Series
    potential: pd.Series
    total: pd.Series
    internal: pd.Series
    external: pd.Series
    internal_share: pd.Series
    external_share: pd.Series
    flagged: tuple[int, ...]
    period_internal_share: float
    period_external_share: float
    mean_internal_share: float
    trended: bool = False
    growth: "GrowthSplit | None" = None
    raw_actual: pd.Series | None = field(default=None, repr=False)
    raw_synthetic: pd.Series | None = field(default=None, repr=False)

    def table(self) -> pd.DataFrame:
        df = pd.DataFrame({
            "actual": self.actual, "synthetic": self.synthetic, "potential": self.potential,
            "total": self.total, "internal": self.internal, "external": self.external,
            "internal_share": self.internal_share, "external_share": self.external_share,
        })
        df["flagged"] = [y in self.flagged for y in df.index]
        df.index.name = "year"
        return df

    def to_dict(self) -> dict:
        def ser(s):
            return {int(k): (None if not math.isfinite(v) else float(v)) for k, v in s.items()}

        d = {
            "years": list(self.years),
            "trended": self.trended,
            "flagged_years": list(self.flagged),
            "period_internal_share": self.period_internal_share,
            "period_external_share": self.period_external_share,
            "mean_internal_share": self.mean_internal_share,
            "actual": ser(self.actual), "synthetic": ser(self.synthetic), "potential": ser(self.potential),
            "internal": ser(self.internal), "external": ser(self.external),
            "internal_share": ser(self.internal_share), "external_share": ser(self.external_share),
        }
        if self.growth is not None:
            d["growth"] = self.growth.to_dict()
        return d


def _on(series: pd.Series, years, what: str) -> pd.Series:
    missing = [y for y in years if y not in series.index]
    if missing:
        raise ValidationError(f"{what} not defined for years {missing}")
    out = series.loc[years].astype(float)
    if not np.all(np.isfinite(out.to_numpy())):
        raise ValidationError(f"{what} has non-finite values in the window")
    return out


def decompose_shortfall(actual: pd.Series, synthetic: pd.Series, potential: pd.Series,
                        window: YearWindow, *, trended: bool = False) -> TrendDecomposition:
    """Split ``potential - actual`` into internal and external components.

    Period shares weight each unflagged year by its total shortfall, i.e.
    ``sum(internal) / sum(total)``; ``mean_internal_share`` is the plain mean
    of the per-year shares for comparison.

    Raises
    ------
    NumericalError
        If the total shortfall is nonpositive in every year of ``window``.
    """
    years = window_years(window)
    a = _on(actual, years, "actual")
    s = _on(synthetic, years, "synthetic")
    p = _on(potential, years, "potential")
    total = p - a
    internal = s - a
    external = p - s
    with np.errstate(divide="ignore", invalid="ignore"):
        ishare = internal / total
        eshare = external / total
    ishare[total == 0] = math.nan
    eshare[total == 0] = math.nan
    ok = total > 0
    flagged = tuple(int(y) for y in total.index[~ok])
    if not ok.any():
        raise NumericalError(f"total shortfall is nonpositive in every year of {window}; decomposition undefined")
    for y in flagged:
        logger.info("decomposition: year %d flagged (total shortfall %.6g <= 0)", y, total[y])
    period_internal = float(internal[ok].sum() / total[ok].sum())
    return TrendDecomposition(
        years=tuple(years), actual=a.rename("actual"), synthetic=s.rename("synthetic"),
        potential=p.rename("potential"), total=total.rename("total"), internal=internal.rename("internal"),
        external=external.rename("external"), internal_share=ishare.rename("internal_share"),
        external_share=eshare.rename("external_share"), flagged=flagged,
        period_internal_share=period_internal, period_external_share=1.0 - period_internal,
        mean_internal_share=float(ishare[ok].mean()), trended=trended,
    )


@dataclass(frozen=True)
class GrowthSplit:
    internal_pp: float
    external_pp: float
    mean_actual_growth: float
    mean_synthetic_growth: float
    potential_growth: float
    growth_years: tuple[int, ...]

    @property
    def internal_fraction(self) -> float:
        tot = self.internal_pp + self.external_pp
        return self.internal_pp / tot if tot else math.nan

    def to_dict(self) -> dict:
        return {
            "internal_pp": self.internal_pp, "external_pp": self.external_pp,
            "internal_fraction": self.internal_fraction,
            "mean_actual_growth": self.mean_actual_growth, "mean_synthetic_growth": self.mean_synthetic_growth,
            "potential_growth": self.potential_growth, "growth_years": list(self.growth_years),
        }


def growth_decomposition(actual: pd.Series, synthetic: pd.Series, potential_growth: float,
                         window: YearWindow) -> GrowthSplit:
    """Split the growth shortfall over ``window`` into percentage points.

    Growth rates are year-on-year changes for every year after the window's
    first, which serves as the base.
    """
    years = window_years(window)
    ga = percent_changes(_on(actual, years, "actual"))
    gs = percent_changes(_on(synthetic, years, "synthetic"))
    ma, ms = float(ga.mean()), float(gs.mean())
    return GrowthSplit(
        internal_pp=ms - ma, external_pp=potential_growth - ms, mean_actual_growth=ma,
        mean_synthetic_growth=ms, potential_growth=float(potential_growth),
        growth_years=tuple(int(y) for y in ga.index),
    )


def shortfall_analysis(actual: pd.Series, synthetic: pd.Series, window: YearWindow, *,
                       scale: pd.Series | None = None, growth_rate: float = POTENTIAL_GROWTH,
                       anchor: str = "actual", trended: bool = False,
                       lamb: float = HP_LAMBDA_ANNUAL) -> TrendDecomposition:
    """Full decomposition from per-unit paths.

    ``scale`` multiplies both paths year by year before anything else (e.g.
    population, turning per-capita output into aggregate output).  With
    ``trended`` the HP trends of the scaled paths replace the raw ones.  The
    potential path starts at the window's first year from the actual value
    (``anchor="actual"``) or from its HP trend (``anchor="trend"``).
    """
    if anchor not in ("actual", "trend"):
        raise ValidationError(f"unknown anchor {anchor!r}")
    a, s = actual.astype(float), synthetic.astype(float)
    if scale is not None:
        idx = a.index
        missing = [y for y in idx if y not in scale.index]
        if missing:
            raise ValidationError(f"scale series missing years {missing}")
        a = a * scale.loc[idx].to_numpy()
        s = s * scale.loc[s.index].to_numpy()
    a_trend, _ = hp_filter(a, lamb)
    s_trend, _ = hp_filter(s, lamb)
    start = window[0]
    anchor_value = float((a_trend if anchor == "trend" else a)[start])
    potential = potential_path(start, anchor_value, growth_rate, end_year=window[1])
    use_a, use_s = (a_trend, s_trend) if trended else (a, s)
    dec = decompose_shortfall(use_a, use_s, potential, window, trended=trended)
    growth = growth_decomposition(use_a, use_s, growth_rate, window)
    return replace(dec, growth=growth, raw_actual=a, raw_synthetic=s)
