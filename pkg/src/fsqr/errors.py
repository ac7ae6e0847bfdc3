"""Exception types raised across the package."""


class FSQRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(FSQRError, ValueError):
    """An option or parameter is out of its valid range."""


class DataError(FSQRError, ValueError):
    """Input data is malformed, non-finite or degenerate."""


class NumericalError(FSQRError, ArithmeticError):
    """The iteration produced non-finite values."""


class PathError(FSQRError, RuntimeError):
    """Every fit along a regularization path failed."""
