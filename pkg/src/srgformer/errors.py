class SrgError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(SrgError, ValueError):
    """Operand shapes are incompatible."""


class DataError(SrgError):
    """Input data is missing, malformed, or inconsistent."""


class NumericError(SrgError):
    """Training produced a non-finite value."""

    def __init__(self, message: str, snapshot: dict | None = None):
        super().__init__(message)
        self.snapshot = snapshot or {}
