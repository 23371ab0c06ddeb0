"""Exception types raised across the package."""

from __future__ import annotations


class FilterError(Exception):
    """Base class for all package errors."""


class NotPositiveDefinite(FilterError):
    """A matrix that must be SPD failed Cholesky factorization."""


class RegularizationFailed(FilterError):
    """Jitter escalation could not make a matrix positive definite."""


class DimensionMismatch(FilterError, ValueError):
    pass


class NonFiniteFunctionValue(FilterError):
    """A model or loss returned NaN/inf at an evaluation point."""


class DerivativeMismatch(FilterError):
    """An analytic derivative disagrees with central differences."""

    def __init__(self, component: str, max_rel_error: float):
        super().__init__(f"{component}: max relative error {max_rel_error:.3e}")
        self.component = component
        self.max_rel_error = max_rel_error


class MapDivergence(FilterError):
    """Damped Newton did not reach the gradient tolerance."""


class ConeCollision(FilterError):
    """The lidar origin coincides with a landmark; bearing is undefined."""


class StepFailure(FilterError):
    """A filter step failed inside a trajectory run."""

    def __init__(self, step: int, cause: Exception):
        super().__init__(f"step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause


class ConfigError(FilterError, ValueError):
    """Invalid run configuration; ``key`` is a dotted path into the document."""

    def __init__(self, key: str, reason: str):
        super().__init__(f"{key}: {reason}")
        self.key = key
        self.reason = reason


class MalformedInput(FilterError, ValueError):
    def __init__(self, row: int, reason: str):
        super().__init__(f"row {row}: {reason}")
        self.row = row
        self.reason = reason
