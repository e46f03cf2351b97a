"""Exception types shared across the package."""


class FairkanError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(FairkanError, ValueError):
    """Array dimensions do not match what an operation requires."""


class ConfigError(FairkanError, ValueError):
    """Invalid configuration value or combination."""


class DataError(FairkanError, ValueError):
    """Input data violates a contract (non-binary column, non-finite value, ...)."""


class SchemaError(DataError):
    """A required column is missing or mistyped in a data source."""


class ModelFormatError(FairkanError, ValueError):
    """A serialized model stream is truncated, corrupt, or of an unknown version."""


class NumericError(FairkanError, ArithmeticError):
    """A computation received or produced non-finite values."""


class RefinementError(FairkanError, RuntimeError):
    """Grid refinement failed to reproduce the coarse spline."""


class UsageError(FairkanError, RuntimeError):
    """An operation was called with state it cannot have produced (stale cache)."""


class DivergenceError(FairkanError, RuntimeError):
    """Training loss became non-finite or exceeded the divergence guard."""

    def __init__(self, phase: str, epoch: int, loss: float):
        self.phase = phase
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"loss diverged during {phase} at epoch {epoch}: {loss!r}")
