"""Exception types shared across the package.

The CLI maps each class onto a process exit code.
"""


class StrError(Exception):
    exit_code = 3
    kind = "error"


class DimensionError(StrError, ValueError):
    kind = "dimension"


class DomainError(StrError, ValueError):
    kind = "domain"


class UsageError(StrError):
    kind = "usage"


class FormatError(StrError, ValueError):
    kind = "format"


class NumericalError(StrError, FloatingPointError):
    exit_code = 4
    kind = "numerical"
