"""Exception hierarchy.

Input problems derive from :class:`InputError` (CLI exit code 1), numeric
failures from :class:`NumericError` (CLI exit code 2).
"""


class SegRiskError(Exception):
    """Base class for all package errors."""


class InputError(SegRiskError, ValueError):
    """Something about the caller's input is wrong."""


class InvalidInputError(InputError):
    pass


class InvalidLabelError(InputError):
    pass


class InvalidParameterError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class DegenerateModelError(InputError):
    pass


class JoinError(InputError):
    pass


class FormatError(InputError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class NumericError(SegRiskError, ArithmeticError):
    pass


class DivergenceError(NumericError):
    def __init__(self, epoch, lr, value):
        self.epoch = epoch
        self.lr = lr
        self.value = value
        super().__init__(f"non-finite loss {value!r} at epoch {epoch} (lr={lr:g})")


class UndefinedMetricError(NumericError):
    pass
