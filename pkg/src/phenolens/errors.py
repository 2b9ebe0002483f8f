"""Exception hierarchy.

Every error carries a short ``category`` used in CLI diagnostics
(``ERROR(<category>): ...``) and the process exit code it maps to.
"""


class PhenolensError(Exception):
    category = "error"
    exit_code = 1


class ConfigError(PhenolensError, ValueError):
    """Invalid configuration or command-line arguments."""

    category = "config"
    exit_code = 2

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class FormatError(PhenolensError, ValueError):
    """Malformed file content (CSV, PGM, checkpoint)."""

    category = "format"
    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class NotACheckpointError(FormatError):
    category = "not-a-checkpoint"


class CheckpointVersionError(FormatError):
    category = "version"


class CorruptCheckpointError(FormatError):
    category = "corruption"


class DataError(PhenolensError, ValueError):
    """Input data violating a precondition (empty class, mismatched dims...)."""

    category = "data"
    exit_code = 3


class EmptyClassError(DataError):
    category = "empty-class"


class ClassMismatchError(DataError):
    category = "class-mismatch"


class DimensionMismatchError(DataError):
    category = "dimension-mismatch"


class StratificationError(DataError):
    category = "stratification"


class InsufficientDataError(DataError):
    category = "insufficient-data"


class NumericError(PhenolensError, ArithmeticError):
    """Non-finite values or failed numerical procedures."""

    category = "numeric"
    exit_code = 4


class DegenerateEmbeddingError(NumericError):
    category = "degenerate-embedding"


class DegenerateCenterError(NumericError):
    category = "degenerate-center"


class NormalizationError(NumericError):
    category = "normalization"


class ConvergenceError(NumericError):
    category = "convergence"

    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class ScheduleExhaustedError(NumericError):
    category = "schedule-exhausted"
