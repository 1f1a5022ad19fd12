"""Synthetic control and structural time-series tools for single-unit policy evaluation."""

from .errors import ConvergenceError, NumericalError, ParseError, SynthImpactError, ValidationError
from .panel import DonorPoolSpec, Panel, PredictorSpec, load_bundled_panel, load_panel
from .scm import DonorWeights, OptimizerOptions, PredictorWeights, ScmFit, ScmProblem, solve_inner, solve_nested

__version__ = "0.1.0"

__all__ = [
    "ConvergenceError", "DonorPoolSpec", "DonorWeights", "NumericalError", "OptimizerOptions",
    "Panel", "ParseError", "PredictorSpec", "PredictorWeights", "ScmFit", "ScmProblem",
    "SynthImpactError", "ValidationError", "load_bundled_panel", "load_panel", "solve_inner",
    "solve_nested",
]
