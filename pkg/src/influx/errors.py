"""Exception types shared across the package.

The CLI maps these onto exit codes, so every error raised on purpose should
derive from :class:`InfluxError`.
"""


class InfluxError(Exception):
    exit_code = 1


class SpecError(InfluxError, ValueError):
    """Invalid parameters or inconsistent input specification."""

    exit_code = 2


class FormatError(SpecError):
    """Malformed input file. ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class DomainError(SpecError):
    """Node id outside ``0..K-1``."""


class PreconditionError(SpecError):
    pass


class UnsupportedError(SpecError):
    pass


class InvariantError(SpecError):
    """A data structure invariant (e.g. nonnegative rates) would be broken."""


class NumericalError(InfluxError, ArithmeticError):
    exit_code = 3


class StabilityError(NumericalError):
    def __init__(self, message, suggested_step=None):
        self.suggested_step = suggested_step
        if suggested_step is not None:
            message = f"{message} (try step <= {suggested_step:.3g})"
        super().__init__(message)


class ResourceError(InfluxError, MemoryError):
    exit_code = 4
