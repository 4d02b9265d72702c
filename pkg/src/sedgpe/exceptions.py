"""Exception hierarchy shared by all modules."""

from sklearn.exceptions import NotFittedError  # noqa: F401  (re-exported)


class SedError(Exception):
    """Base class for every error raised by this package."""

    #: stage label attached by the pipeline when an error propagates
    stage = None


class InvalidInput(SedError, ValueError):
    pass


class InvalidConfig(SedError, ValueError):
    pass


class InsufficientData(SedError, ValueError):
    pass


class SchemaError(SedError, ValueError):
    pass


class ParseError(SedError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotPositiveDefinite(SedError, ValueError):
    pass


class DegenerateField(SedError, ValueError):
    pass


class DegenerateCoordinate(SedError, ValueError):
    pass


class RankDeficientBasis(SedError, ValueError):
    pass


class FitFailed(SedError, RuntimeError):
    pass


class FitAborted(SedError, RuntimeError):
    pass


class Infeasible(SedError, RuntimeError):
    """Dispatch problem has no feasible schedule."""

    def __init__(self, message, hour=None):
        self.hour = hour
        if hour is not None:
            message = f"hour {hour}: {message}"
        super().__init__(message)
