"""Exception types shared across the package."""


class DataFormatError(ValueError):
    """Raised when an input file or record set cannot be parsed or validated."""


class NumericalError(RuntimeError):
    """Raised when a numerical operation fails (non-positive-definite
    precision, degenerate statistics, impossible parameter update)."""


class CapacityError(RuntimeError):
    """Raised when a requested dense solve exceeds the configured size limit."""
