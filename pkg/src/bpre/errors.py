"""Exception types shared across the package."""


class BPREError(Exception):
    """Base class for all package errors."""


class ParameterError(BPREError, ValueError):
    """Invalid law parameters, windows or options."""


class EstimationError(BPREError, ArithmeticError):
    """A statistic is undefined for the given data (e.g. subcritical sample mean)."""


class CountOverflowError(BPREError, OverflowError):
    """A simulated population count no longer fits in a 64-bit integer."""


class DataValidationError(BPREError, ValueError):
    """Malformed or inconsistent input data (CSV rows, series, panels)."""


class OracleSizeError(BPREError, MemoryError):
    """The exact pmf chain would exceed the configured support limit."""
