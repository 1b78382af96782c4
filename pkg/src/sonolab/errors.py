"""Exception hierarchy shared by every sonolab module."""

import numpy as np

__all__ = [
    "SonolabError",
    "InvalidArgumentError",
    "InvalidGeometryError",
    "DegenerateInputError",
    "SingularMatrixError",
    "NoConvergenceError",
    "ConfigError",
    "VerificationError",
    "IllConditionedWarning",
]


class SonolabError(Exception):
    """Base class for all errors raised by sonolab."""


class InvalidArgumentError(SonolabError, ValueError):
    """An argument violates a documented precondition."""


class InvalidGeometryError(InvalidArgumentError):
    """An array geometry is malformed or fails a coverage requirement."""


class DegenerateInputError(InvalidArgumentError):
    """Input data carries no usable information (e.g. zero mass)."""


class SingularMatrixError(SonolabError, np.linalg.LinAlgError):
    """A matrix that must be inverted is singular to working precision."""


class NoConvergenceError(SonolabError, RuntimeError):
    """An iterative solver stopped before meeting its target.

    Parameters
    ----------
    message : str
        Human readable description.
    residual : float
        Best residual norm reached before giving up.
    """

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = float(residual)


class ConfigError(SonolabError, ValueError):
    """An experiment configuration is missing a field or holds a bad value."""


class VerificationError(SonolabError):
    """A requested verification (e.g. co-array coverage) failed."""


class IllConditionedWarning(UserWarning):
    """Emitted when a linear model is numerically ill-conditioned."""
