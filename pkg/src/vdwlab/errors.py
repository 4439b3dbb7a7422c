"""Exception types shared across the package."""


class VdwlabError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(VdwlabError, ValueError):
    """Invalid model, grid, or scenario configuration."""


class BudgetError(ConfigurationError):
    """A declared resource budget (memory, factorial) would be exceeded."""


class PreconditionError(VdwlabError, ValueError):
    """An operation was called outside its stated domain of validity."""


class SolverError(VdwlabError, RuntimeError):
    """Base class for numerical solver failures."""


class ConvergenceError(SolverError):
    """Iteration did not reach the requested residual."""

    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class GapError(SolverError):
    """A required spectral gap is absent: the shifted operator is not
    positive definite on the projected subspace."""


class DegenerateGroundStateError(SolverError):
    """Ground-state non-degeneracy (needed to define the dispersion
    coefficient) fails numerically."""
