"""Exception types shared across the solvers."""


class BudgetMechError(Exception):
    """Base class for all package-specific errors."""


class CostModelError(BudgetMechError):
    """Cost function violates a structural requirement (e.g. nonzero cost at x=0)."""


class DistributionError(BudgetMechError):
    """Type distribution is malformed (empty support, nonpositive density, ...)."""


class NonMonotoneScheduleError(BudgetMechError):
    """An action schedule that must be nonincreasing is not."""


class InfeasibleScheduleError(BudgetMechError):
    """A (x, t) pair cannot come from any feasible mechanism."""


class NoConvergenceError(BudgetMechError):
    """Root bracketing or iteration budget exhausted."""


class RegularityViolatedError(BudgetMechError):
    """Pointwise shooting produced a non-monotone branch; interior ironing
    would be needed.  Callers should fall back to the discrete oracle."""


class DegenerateDistributionError(BudgetMechError):
    """Distribution unusable by the continuous solvers (zero-length support...)."""


class NonSeparableCostError(BudgetMechError):
    """Closed-form solver called on a cost without multiplicative structure."""


class GammaNotStrictlyConvexError(BudgetMechError):
    """Separable action-cost factor has a non-invertible derivative."""


class DegenerateMechanismError(BudgetMechError):
    """Resource value so high that the optimal mechanism is x = t = 0."""


class UnboundedActionError(BudgetMechError):
    """The budget cannot be exhausted by any finite action."""


class ConfigError(BudgetMechError):
    """Malformed CLI / JSON configuration."""
