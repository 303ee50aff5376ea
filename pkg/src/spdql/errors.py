"""Exception hierarchy shared by every module.

The CLI maps :class:`ConfigError` to exit code 1 and
:class:`NumericalError` (and subclasses) to exit code 2.
"""


class SpdqlError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SpdqlError, ValueError):
    """Shape mismatch, out-of-domain scalar or malformed model data."""


class InfeasibleSetError(InvalidArgument):
    """A projection target set is empty."""


class InvalidSchedule(InvalidArgument):
    """A distribution schedule violates the positive-floor requirement."""


class ConfigError(SpdqlError):
    """Experiment configuration could not be validated."""

    def __init__(self, message, field=None):
        self.field = field
        if field is not None:
            message = f"{field}: {message}"
        super().__init__(message)


class StreamExhausted(SpdqlError):
    """A transition stream ended before the requested number of steps."""


class NumericalError(SpdqlError):
    """Iterative routine failed, or a NaN/inf appeared."""


class NumericalFailure(NumericalError):
    """Iteration cap reached; ``estimate`` holds the last partial value."""

    def __init__(self, message, estimate=None):
        self.estimate = estimate
        super().__init__(message)


class InternalConsistencyError(NumericalError):
    """Two routes to the same quantity disagree, or a certified bound failed."""


class ContractError(InternalConsistencyError):
    """An iterate violated a feasibility invariant."""
