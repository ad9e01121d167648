"""Exception hierarchy shared by the library and the CLI."""


class PGelfandError(Exception):
    """Base class for all errors raised by pgelfand."""


class ConfigurationError(PGelfandError, ValueError):
    """Invalid user input: sizes, exponents, descriptors, flags."""


class MaskFileError(ConfigurationError):
    """A mask file could not be read or is malformed."""


class EmptyDomainError(ConfigurationError):
    """The discretized domain has no interior nodes."""


class NumericalError(PGelfandError, ArithmeticError):
    """A solver produced non-finite values."""


class SolverFailure(PGelfandError):
    """An inner solve failed; ``component`` names the offending system component."""

    def __init__(self, message, report=None, component=None):
        super().__init__(message)
        self.report = report
        self.component = component


class OutputError(PGelfandError, OSError):
    """Reading or writing an output file failed; ``path`` names the file."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path
