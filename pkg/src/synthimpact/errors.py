"""Exception hierarchy.

Validation problems (bad input, bad configuration) and numerical failures are
kept apart so the command line can map them to distinct exit codes.
"""


class SynthImpactError(Exception):
    """Base class for all package errors."""


class ValidationError(SynthImpactError, ValueError):
    """Input data or configuration violates a documented precondition."""


class ParseError(ValidationError):
    """A panel file could not be parsed.

    ``line`` is the 1-based line number of the offending row, when known.
    """

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(SynthImpactError, ArithmeticError):
    """A computation produced a non-finite or otherwise unusable result."""


class ConvergenceError(NumericalError):
    """An optimizer failed to converge.  ``incumbent`` holds the best point found."""

    def __init__(self, message: str, incumbent=None):
        self.incumbent = incumbent
        super().__init__(message)
