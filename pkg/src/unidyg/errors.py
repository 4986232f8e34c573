"""Exception types raised across the engine."""


class UniDyGError(Exception):
    pass


class InvalidArgumentError(UniDyGError, ValueError):
    pass


class InvalidInputError(UniDyGError, ValueError):
    """Malformed or inconsistent input data (files, snapshot lists, streams)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DimensionError(UniDyGError, ValueError):
    pass


class NumericError(UniDyGError, ArithmeticError):
    pass


class TemporalOrderError(UniDyGError, ValueError):
    pass


class ModeViolationError(UniDyGError, RuntimeError):
    pass


class LeakageError(UniDyGError, AssertionError):
    """A sampled neighbor is not strictly in the past of its query."""
