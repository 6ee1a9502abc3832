"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line can map failures to
its documented status codes without a lookup table.
"""


class SEPError(Exception):
    exit_code = 1


class ConfigError(SEPError, ValueError):
    exit_code = 2


class DataError(SEPError, ValueError):
    exit_code = 3


class InvalidValue(DataError):
    """A domain value violates its invariants."""


class InvalidBarPair(DataError):
    pass


class DimensionError(DataError):
    pass


class ShapeError(DataError):
    pass


class UndefinedMetric(DataError):
    pass


class InsufficientData(DataError):
    pass


class InsufficientHistory(DataError):
    pass


class MissingReturnError(DataError, KeyError):
    def __init__(self, ticker: str):
        super().__init__(ticker)
        self.ticker = ticker

    def __str__(self) -> str:
        return f"no realized return for {self.ticker}"


class CandidateCoverageError(DataError):
    pass


class EmptyCandidateError(DataError):
    pass


class TemplateError(SEPError, KeyError):
    exit_code = 2

    def __init__(self, placeholder: str, template: str = ""):
        super().__init__(placeholder)
        self.placeholder = placeholder
        self.template = template

    def __str__(self) -> str:
        where = f" in template {self.template!r}" if self.template else ""
        return f"unbound placeholder {{{self.placeholder}}}{where}"


class BackendError(SEPError):
    exit_code = 4


class TransientBackendError(BackendError):
    """Raised by backends for failures worth retrying (transport, 429, 5xx)."""


class BackendUnavailable(BackendError):
    pass


class MalformedBackendReply(BackendError):
    pass


class ScriptExhausted(BackendError):
    pass


class EpisodeAborted(BackendError):
    """A backend failure inside a reflection episode; ``memory`` holds what was built."""

    def __init__(self, cause: Exception, memory=None):
        super().__init__(f"episode aborted: {cause}")
        self.cause = cause
        self.memory = memory


class DivergenceError(SEPError, ArithmeticError):
    exit_code = 5

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = list(trace or [])
