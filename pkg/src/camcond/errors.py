"""Exception hierarchy; each class carries the CLI exit code it maps to."""


class CamcondError(Exception):
    exit_code = 1
    code = "error"


class UsageError(CamcondError):
    exit_code = 1
    code = "usage_error"


class FormatError(CamcondError):
    """Malformed or unreadable input file."""

    exit_code = 2
    code = "format_error"


class ContractError(CamcondError, ValueError):
    """A precondition of an operation was violated (shapes, ranges, divisibility)."""

    exit_code = 3
    code = "contract_error"


class PixelRangeError(ContractError, IndexError):
    code = "range_error"


class NumericError(CamcondError, ArithmeticError):
    exit_code = 4
    code = "numeric_error"


class CalibrationError(NumericError):
    code = "calibration_error"


class UndefinedMetricError(NumericError):
    code = "undefined_metric"
