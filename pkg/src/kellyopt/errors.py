"""Semantic exception hierarchy shared across the package."""

from __future__ import annotations


class KellyoptError(Exception):
    """Base class for all errors raised by this package."""


class EdgeError(KellyoptError, ValueError):
    """A bet or argument violates a domain precondition (e.g. nonpositive edge)."""


class CapacityError(KellyoptError):
    """A problem exceeds a hard size cap (scenario enumeration blow-up)."""


class QuadratureError(KellyoptError):
    """The quadrature grid could not reach the requested accuracy."""


class ConvergenceError(KellyoptError):
    """An optimizer failed to converge; carries the last iterate for diagnosis."""

    def __init__(self, message: str, result=None):
        super().__init__(message)
        self.result = result


class FitError(KellyoptError):
    """A curve fit or model training run failed or was degenerate."""


class CalibrationError(KellyoptError):
    """A Monte-Carlo calibration could not bracket or reach its target."""


class InputError(KellyoptError, ValueError):
    """A file or config failed validation; message names the offending field."""
