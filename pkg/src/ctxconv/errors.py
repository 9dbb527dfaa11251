"""Exception types shared across the package."""


class CtxConvError(Exception):
    """Base class for all package errors."""


class ShapeError(CtxConvError, ValueError):
    """Extents are invalid or incompatible."""


class FormatError(CtxConvError, ValueError):
    """A file does not match the format it claims to be in."""


class CheckError(CtxConvError, ArithmeticError):
    """A numerical verification hit non-finite values."""


class TrainingError(CtxConvError, ArithmeticError):
    """Training produced a non-finite loss."""


class ConfigError(CtxConvError, ValueError):
    """A run configuration is malformed or inconsistent."""
