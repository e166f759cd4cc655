"""Exception types raised by the solvers."""

from __future__ import annotations

__all__ = [
    "SolverError",
    "ResonancePoleError",
    "StepSizeError",
    "IntegrationError",
    "ConvergenceError",
]


class SolverError(RuntimeError):
    """Base class for numerical failures that a sweep may mask or report."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class ResonancePoleError(SolverError):
    """Linear response matrix is singular to working precision.

    ``diagnostics['eigenvalue']`` holds the eigenvalue closest to zero.
    """


class StepSizeError(SolverError, ValueError):
    """Requested time step does not resolve the fastest rate in the problem."""


class IntegrationError(SolverError):
    """Time integration produced non-finite values."""


class ConvergenceError(SolverError):
    """An iterative steady-state solve did not converge."""
