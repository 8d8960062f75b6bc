"""Exception hierarchy shared across the package."""


class SegvoxError(Exception):
    """Base class for all package errors."""


class FormatError(SegvoxError):
    """A file does not match the expected binary or text layout."""


class ConfigError(SegvoxError, ValueError):
    """An invalid configuration value or an incompatible config pairing."""


class DataError(SegvoxError, ValueError):
    """Input data violates a precondition (range, ordering, length)."""


class AlignmentError(DataError):
    """Two sequences that must share a time grid do not line up."""


class NumericError(SegvoxError, ArithmeticError):
    """A non-finite value appeared during computation."""
