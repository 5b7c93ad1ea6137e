"""Exception types shared across the toolkit."""


class RenegingLabError(Exception):
    """Base class for every error raised by this package."""


class NonPositiveParameter(RenegingLabError):
    """A rate, volume, or weight that must be positive (or non-negative) is not."""


class NegativeParameter(RenegingLabError):
    """A pricing parameter that must be non-negative is negative."""


class WeightSumError(RenegingLabError):
    """Class weights do not sum to one."""


class OrderingError(RenegingLabError):
    """Per-class throughputs are not strictly decreasing."""


class ImpatienceError(RenegingLabError):
    """Impatience rate is not below the slowest class service rate."""


class InstabilityError(RenegingLabError):
    """Operation requires a stable system (offered load below one)."""


class NotOverloadedError(RenegingLabError):
    """Fluid-regime operation called on a model that is not overloaded."""

    def __init__(self, rho: float):
        super().__init__(f"fluid analysis requires offered load rho > 1, got rho = {rho:.6g}")
        self.rho = rho


class OutOfSpaceError(RenegingLabError):
    """State lies outside the truncated state space."""


class ConvergenceError(RenegingLabError):
    """Iterative solver exhausted its iteration budget."""

    def __init__(self, message: str, residual: float | None = None, iterations: int | None = None):
        if residual is not None:
            message = f"{message} (residual {residual:.3e} after {iterations} iterations)"
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class GapTooLarge(RenegingLabError):
    """Truncation bracket is wider than the requested tolerance.

    Signals that the state space is too small for the requested accuracy,
    not that the linear solver failed.
    """

    def __init__(self, gap: float, tol: float, n_max: int):
        super().__init__(
            f"bracket gap {gap:.3e} exceeds tolerance {tol:.3e} even when solving up to level {n_max}"
        )
        self.gap = gap
        self.tol = tol
        self.n_max = n_max


class UnknownClass(RenegingLabError):
    """Class index outside the model's range."""


class ConfigError(RenegingLabError):
    """Run configuration file is missing, unreadable, or invalid."""
