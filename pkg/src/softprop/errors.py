"""Exception types shared across the package."""


class SoftpropError(Exception):
    """Base class for package errors."""


class ShapeError(SoftpropError, ValueError):
    """Array shapes or dimensions do not agree."""


class NonFiniteError(SoftpropError, FloatingPointError):
    """NaN or infinity met where finite values are required."""


class ConfigMismatchError(SoftpropError, ValueError):
    """A checkpoint or dataset does not match the requested configuration."""


class DatasetError(SoftpropError, ValueError):
    """Malformed, empty or inconsistent dataset."""
