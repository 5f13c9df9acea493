"""Exception types shared across the package.

The CLI maps these onto exit codes: ValidationError/ConfigError -> 1,
DivergenceError -> 2, I/O and missing-data problems -> 3.
"""

from __future__ import annotations


class WhittleqError(Exception):
    """Base class for package errors."""


class ValidationError(WhittleqError):
    """A model, feature map, or argument failed an invariant check."""

    def __init__(self, message: str, violations: list[str] | None = None):
        super().__init__(message)
        self.violations = list(violations) if violations else []


class ConfigError(ValidationError):
    """Bad experiment configuration or CLI arguments."""


class NonConvergenceError(WhittleqError):
    """Dynamic-programming iteration did not reach the requested tolerance."""

    def __init__(self, message: str, last_residual: float):
        super().__init__(f"{message} (last span residual {last_residual:.3e})")
        self.last_residual = last_residual


class BracketError(WhittleqError):
    """Bisection could not bracket a sign change after the expansion cap."""


class DivergenceError(WhittleqError):
    """A learner iterate blew past the divergence cap.

    Carries the offending iterate so callers can inspect it.
    """

    def __init__(self, quantity: str, iteration: int, value: float,
                 lam: float | None = None):
        super().__init__(
            f"divergence at step {iteration}: {quantity}={value!r}"
            + (f" (lambda={lam!r})" if lam is not None else "")
        )
        self.quantity = quantity
        self.iteration = iteration
        self.value = value
        self.lam = lam


class AssumptionViolationError(WhittleqError):
    """A structural assumption failed (reducible or periodic chain, etc.)."""


class ReferenceUnavailableError(WhittleqError):
    """A diagnostic needs a reference solution that was not provided."""


class MissingDataError(WhittleqError):
    """A required input file or recorded artifact is absent or unreadable."""
