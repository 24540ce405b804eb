"""Exception types raised across the package."""


class FlexIOError(Exception):
    """Base class for all package errors."""


class InvalidInput(FlexIOError, ValueError):
    """An argument has the wrong shape, length or value."""


class ConfigError(FlexIOError, ValueError):
    """A configuration is internally inconsistent or does not fit the input."""


class InvalidTarget(FlexIOError, ValueError):
    """A reference signal is identically zero."""


class ComplexityError(FlexIOError, ValueError):
    """The requested computation would be combinatorially too expensive."""


class DataError(FlexIOError, RuntimeError):
    """Stored data (dataset or checkpoint) is missing or corrupt."""


class TrainingDiverged(FlexIOError, RuntimeError):
    """The training loss became non-finite."""
