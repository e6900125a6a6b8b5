"""Exception types shared across the package.

Numerical routines raise these instead of returning sentinel values so that
callers (and the CLI exit-code mapping) can distinguish configuration
problems from genuine numerical failures.
"""

from __future__ import annotations


class SlowsolError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(SlowsolError, ValueError):
    """Parameter set failed one of the structural validity checks."""


class NotInImage(SlowsolError, ValueError):
    """Point has no preimage under the solenoid embedding."""


class AmbiguousBranch(SlowsolError, ValueError):
    """More than one inverse branch reconstructs the point within tolerance."""


class OutOfDomain(SlowsolError, ValueError):
    """Chart evaluation requested outside the validated domain."""


class TailTooLarge(SlowsolError, ValueError):
    """Truncated power series cannot reach the required tail bound."""


class StepFailure(SlowsolError, RuntimeError):
    """Adaptive integrator could not meet tolerance above the minimum step."""


class BudgetExceeded(SlowsolError, RuntimeError):
    """Adaptive integrator exhausted its step budget."""


class NoExit(SlowsolError, RuntimeError):
    """Trajectory cannot leave the ball (starts on the stable plane)."""


class FailedToSpan(SlowsolError, RuntimeError):
    """Curve growth exhausted its budget before covering the requested span."""


class CurveTooCoarse(SlowsolError, RuntimeError):
    """Polyline resolution is insufficient for the requested measurement."""


class WindowTooSparse(SlowsolError, ValueError):
    """Fit window contains too few usable bins."""


class ZeroMeans(SlowsolError, ValueError):
    """Tail-sum comparison needs observables with nonzero means."""


class BadBase(SlowsolError, ValueError):
    """Candidate base interval fails the separation-from-ball requirement."""
