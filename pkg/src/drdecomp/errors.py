"""Exception hierarchy.

Validation problems (bad input, bad configuration) derive from
:class:`ValidationError`; problems that arise while estimating on valid input
derive from :class:`EstimationError`. The CLI maps the two families onto
different exit codes.
"""


class DecompError(Exception):
    """Base class for all package errors."""


class ValidationError(DecompError, ValueError):
    """Input data or configuration violates a documented contract."""


class MissingColumnError(ValidationError):
    def __init__(self, column: str):
        super().__init__(f"column not found: {column!r}")
        self.column = column


class ParseError(ValidationError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")
        self.row = row
        self.column = column
        self.value = value


class EstimationError(DecompError, RuntimeError):
    """Estimation failed on otherwise valid input."""


class DegenerateSampleError(EstimationError):
    """A sample (or resample, or fold) lacks one of the two groups."""


class SingularDesignError(EstimationError):
    def __init__(self, message: str, column: str | None = None):
        super().__init__(message)
        self.column = column


class NonConvergenceError(EstimationError):
    pass


class TrimmingExhaustedError(EstimationError):
    pass


class UnsupportedCombinationError(ValidationError):
    pass


class ExcessiveFailuresError(EstimationError):
    """Too many replicates (bootstrap draws, folds, simulation reps) were skipped."""
