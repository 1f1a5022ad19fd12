"""SVG figures for the command-line reports.

Figures are built on bare :class:`matplotlib.figure.Figure` objects (no pyplot
state) and saved with a fixed hash salt and no timestamp, so identical inputs
give byte-identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping

import matplotlib as mpl
import numpy as np
import pandas as pd
from matplotlib.figure import Figure

STYLE = {
    "svg.hashsalt": "synthimpact",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "legend.frameon": False,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
}

ACTUAL = "#1b1b1b"
SYNTH = "#c0392b"
POTENTIAL = "#2471a3"
PLACEBO = "#b3b3b3"


def _figure(width=6.0, height=3.6):
    fig = Figure(figsize=(width, height))
    ax = fig.add_subplot()
    return fig, ax


def save_svg(fig: Figure, path, description: str = "") -> Path:
    """Write ``fig`` as SVG with reproducible ids and embedded ``description``."""
    path = Path(path)
    with mpl.rc_context(STYLE):
        fig.savefig(path, format="svg", metadata={"Date": None, "Description": description or None})
    return path


def _treatment_rule(ax, year):
    ax.axvline(year, color="0.4", ls="--", lw=0.8)


def _years_axis(ax, years):
    years = list(years)
    step = 2 if len(years) <= 20 else 4
    ax.set_xticks(years[::step])
    ax.set_xlim(years[0] - 0.5, years[-1] + 0.5)


def plot_fit(actual: pd.Series, synthetic: pd.Series, treatment_year: int, *, treated_label: str = "treated",
             ylabel: str = "", title: str = "") -> Figure:
    """Actual versus synthetic path with the treatment year marked."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        ax.plot(actual.index, actual.values, color=ACTUAL, label=treated_label)
        ax.plot(synthetic.index, synthetic.values, color=SYNTH, ls="--", label=f"synthetic {treated_label}")
        _treatment_rule(ax, treatment_year)
        _years_axis(ax, actual.index)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="upper left")
        fig.tight_layout()
    return fig


def plot_decomposition(actual: pd.Series, synthetic: pd.Series, potential: pd.Series, *,
                       history: pd.Series | None = None, ylabel: str = "", title: str = "") -> Figure:
    """Layered paths with the internal and external shortfall shaded."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        if history is not None:
            ax.plot(history.index, history.values, color=ACTUAL, lw=0.9, alpha=0.6)
        x = np.asarray(potential.index)
        ax.fill_between(x, synthetic.values, potential.values, color=POTENTIAL, alpha=0.18, label="external")
        ax.fill_between(x, actual.values, synthetic.values, color=SYNTH, alpha=0.18, label="internal")
        ax.plot(x, potential.values, color=POTENTIAL, label="potential")
        ax.plot(x, synthetic.values, color=SYNTH, ls="--", label="synthetic")
        ax.plot(x, actual.values, color=ACTUAL, label="actual")
        _years_axis(ax, history.index if history is not None else x)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="upper left", ncol=2)
        fig.tight_layout()
    return fig


def plot_shares(table: pd.DataFrame, title: str = "") -> Figure:
    """Per-year internal and external shares side by side; flagged years hatched."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        years = np.asarray(table.index)
        hatch = ["//" if f else "" for f in table["flagged"].to_numpy()]
        width = 0.38
        for k, (col, color) in enumerate((("internal_share", SYNTH), ("external_share", POTENTIAL))):
            vals = table[col].fillna(0).to_numpy()
            bars = ax.bar(years + (k - 0.5) * width, vals, width, color=color, alpha=0.75,
                          label=col.split("_")[0])
            for b, h in zip(bars, hatch):
                b.set_hatch(h)
        ax.axhline(0, color="0.3", lw=0.6)
        ax.set_xticks(years)
        ax.set_ylabel("share of shortfall")
        ax.set_title(title)
        ax.legend(loc="best")
        fig.tight_layout()
    return fig


def plot_growth(split: Mapping[str, float], title: str = "") -> Figure:
    """Mean growth of actual, synthetic and potential paths."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure(4.5, 3.2)
        labels = ["actual", "synthetic", "potential"]
        vals = [split["mean_actual_growth"], split["mean_synthetic_growth"], split["potential_growth"]]
        ax.bar(labels, vals, color=[ACTUAL, SYNTH, POTENTIAL], alpha=0.8)
        for i, v in enumerate(vals):
            ax.annotate(f"{v:.2f}", (i, v), ha="center", va="bottom", fontsize=8)
        ax.axhline(0, color="0.3", lw=0.6)
        ax.set_ylabel("mean annual growth (%)")
        ax.set_title(title)
        fig.tight_layout()
    return fig


def plot_gaps(gaps: pd.DataFrame, treated: str, treatment_year: int, *, excluded=(), title: str = "") -> Figure:
    """Treated gap over the placebo gaps (spaghetti plot)."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        for unit in gaps.columns:
            if unit == treated:
                continue
            ls = ":" if unit in excluded else "-"
            ax.plot(gaps.index, gaps[unit].values, color=PLACEBO, lw=0.8, ls=ls)
        ax.plot(gaps.index, gaps[treated].values, color=ACTUAL, lw=1.8, label=treated)
        ax.axhline(0, color="0.3", lw=0.6)
        _treatment_rule(ax, treatment_year)
        _years_axis(ax, gaps.index)
        ax.set_ylabel("gap (actual - synthetic)")
        ax.set_title(title)
        ax.legend(loc="lower left")
        fig.tight_layout()
    return fig


def plot_pvalues(pvals: pd.DataFrame, level: float = 0.10, title: str = "") -> Figure:
    """Per-year permutation p-values with the significance level marked."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure(5.0, 3.2)
        years = np.asarray(pvals.index)
        p = pvals["p_value"].to_numpy()
        ax.bar(years, p, color=[SYNTH if x <= level else PLACEBO for x in p])
        ax.axhline(level, color="0.3", ls="--", lw=0.8)
        ax.set_xticks(years)
        ax.set_ylim(0, 1.05)
        ax.set_ylabel("p-value")
        ax.set_title(title)
        fig.tight_layout()
    return fig


def plot_paths(paths: Mapping[str, pd.Series], actual: pd.Series, treatment_year: int, *,
               marker_year: int | None = None, ylabel: str = "", title: str = "") -> Figure:
    """Actual path with several alternative synthetic paths (jackknife, in-time placebo)."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        for name, s in paths.items():
            ax.plot(s.index, s.values, lw=0.9, label=name)
        ax.plot(actual.index, actual.values, color=ACTUAL, lw=1.8, label="actual")
        _treatment_rule(ax, treatment_year)
        if marker_year is not None:
            ax.axvline(marker_year, color=SYNTH, ls=":", lw=0.8)
        _years_axis(ax, actual.index)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="upper left", ncol=2)
        fig.tight_layout()
    return fig


def plot_band(fitted: pd.DataFrame | None, counterfactual: pd.DataFrame, actual: pd.Series, *,
              ylabel: str = "", title: str = "") -> Figure:
    """Observed series against the posterior counterfactual mean and 95% band."""
    with mpl.rc_context(STYLE):
        fig, ax = _figure()
        parts = [counterfactual] if fitted is None else [fitted, counterfactual]
        band = pd.concat(parts)
        ax.fill_between(band.index, band["q025"], band["q975"], color=POTENTIAL, alpha=0.2, label="95% interval")
        ax.plot(band.index, band["mean"], color=POTENTIAL, ls="--", label="counterfactual")
        ax.plot(actual.index, actual.values, color=ACTUAL, label="actual")
        _treatment_rule(ax, counterfactual.index[0] - 0.5)
        _years_axis(ax, band.index)
        ax.set_ylabel(ylabel)
        ax.set_title(title)
        ax.legend(loc="upper left")
        fig.tight_layout()
    return fig
