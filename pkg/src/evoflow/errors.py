"""Exception hierarchy shared across the package."""


class EvoflowError(Exception):
    """Base class for all package errors."""


class ConfigError(EvoflowError):
    """Invalid configuration: bad dimensions, mismatched layouts, unknown keys."""


class UsageError(EvoflowError):
    """An operation was called on a state or object that does not support it."""


class DataError(EvoflowError):
    """Training data violates an environment contract (bad edge, bad reward)."""


class TrainingError(EvoflowError):
    """Training produced a non-finite quantity and cannot continue."""

    def __init__(self, message: str, diagnostic: str = ""):
        super().__init__(message)
        self.diagnostic = diagnostic


class TableParseError(EvoflowError):
    """A reward-table file failed to parse; carries the offending line number."""

    def __init__(self, message: str, lineno: int | None = None):
        super().__init__(message)
        self.lineno = lineno


class OracleUnavailableError(EvoflowError):
    """Exhaustive enumeration was requested beyond the configured cap."""
