"""Shared exception types."""


class NumericError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


class CompatibilityError(RuntimeError):
    """Raised when a checkpoint and a dataset (or config) disagree on shapes."""
