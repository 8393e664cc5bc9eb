"""Exception hierarchy.

Every error carries a short ``category`` string; the CLI prints it as the
first token of its one-line failure message.
"""


class RppgError(Exception):
    category = "error"


class InvalidArgument(RppgError, ValueError):
    category = "invalid-argument"


class ConfigError(RppgError, ValueError):
    category = "config"


class DataError(RppgError):
    category = "data"


class TrackingError(RppgError):
    category = "tracking"

    def __init__(self, message, frame=None):
        super().__init__(message)
        self.frame = frame


class ConvergenceError(RppgError):
    category = "convergence"


class NoSignalError(RppgError):
    category = "no-signal"


class UndefinedCorrelation(RppgError, ValueError):
    category = "undefined-correlation"


class DivergenceError(RppgError):
    category = "divergence"


class DegenerateSignalWarning(UserWarning):
    """Raised (as a warning) when a loss hits a zero-variance input."""
