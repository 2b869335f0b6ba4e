"""Exception hierarchy shared by every codescale module.

The CLI maps these onto exit codes: argument/data problems exit 2, numeric
failures exit 3.
"""


class ScalingError(Exception):
    """Base class for all codescale errors."""


class ArgumentError(ScalingError, ValueError):
    """A caller-supplied argument violates an operation's precondition."""


class DataError(ScalingError, ValueError):
    """An input file is malformed. Carries the offending row/column when known."""

    def __init__(self, message, row=None, column=None, source=None):
        where = [source] if source else []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.row = row
        self.column = column
        self.source = source


class EvaluationError(ScalingError, ArithmeticError):
    """A law evaluation produced a non-finite value."""


class UnsupportedLawError(ScalingError):
    """The requested operation is undefined for this coefficient set."""


class FitFailure(ScalingError):
    """No multi-start run converged; ``best`` holds the best unconverged candidate."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class RangeError(ArgumentError):
    """A target lies outside the supported range."""


class EmptyPlanError(ScalingError):
    """Sweep pruning removed every point."""


class InfeasibleError(ScalingError):
    """No exact GPU factorization exists; ``suggestions`` lists nearby feasible values."""

    def __init__(self, message, suggestions=()):
        super().__init__(message)
        self.suggestions = tuple(suggestions)
