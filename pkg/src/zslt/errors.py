"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes, so each class carries one.
"""


class ZsltError(Exception):
    exit_code = 1


class DimensionError(ZsltError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 2


class ParameterError(ZsltError, ValueError):
    """A scalar argument is outside its admissible range."""

    exit_code = 2


class ContractError(ZsltError, ValueError):
    """A documented precondition on the inputs does not hold."""

    exit_code = 2


class ConfigError(ZsltError):
    exit_code = 2


class DataError(ZsltError):
    exit_code = 3


class FormatError(DataError):
    """Malformed file. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(ZsltError, FloatingPointError):
    """NaN/Inf produced, or a gradient check failed."""

    exit_code = 4
