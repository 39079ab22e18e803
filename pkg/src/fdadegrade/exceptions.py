"""Exception hierarchy.

Each class maps onto a CLI exit status (see :mod:`fdadegrade.cli`).
"""


class DegradationError(Exception):
    """Base class for all package errors."""


class SignalError(DegradationError, ValueError):
    """Invalid or malformed input data (exit status 3)."""


class DomainError(DegradationError, ValueError):
    """A time point lies outside the model horizon ``[0, M]``."""


class FitError(DegradationError, RuntimeError):
    """Model estimation failed (exit status 4)."""


class DegenerateVarianceError(FitError):
    """The posterior variance vanishes where a spread is required."""


class AlreadyFailedError(FitError):
    """The component has numerically crossed the threshold already."""


class ModelFormatError(DegradationError, ValueError):
    """A serialized model document could not be decoded."""
