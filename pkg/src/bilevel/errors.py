"""Exception hierarchy shared by every solver."""

from __future__ import annotations


class BilevelError(Exception):
    """Base class for all toolkit errors."""


class ContractViolation(BilevelError, ValueError):
    """A caller broke a documented precondition (dimensions, ranges)."""


class CapabilityError(BilevelError):
    """The problem lacks an oracle the requested method needs."""


class ConfigError(BilevelError, ValueError):
    """Invalid solver or run configuration."""


class NumericalError(BilevelError, ArithmeticError):
    """Base for failures caused by the numbers themselves."""

    trace = None  # partial SolveTrace, attached by the outer loop on abort


class NumericalDomainError(NumericalError):
    def __init__(self, message, x=None, y=None):
        super().__init__(message)
        self.x = x
        self.y = y


class DivergenceError(NumericalError):
    def __init__(self, t, norm):
        super().__init__(f"iterate diverged at t={t} (norm={norm:.3e})")
        self.t = t
        self.norm = norm


class NonConvergenceError(NumericalError):
    def __init__(self, message, solution=None, residual=None, iterations=None):
        super().__init__(message)
        self.solution = solution
        self.residual = residual
        self.iterations = iterations


class ContractionError(NumericalError):
    """Neumann partial sums grew, so the iteration operator is not contractive."""


class BarrierInfeasibleError(NumericalError):
    def __init__(self, gap):
        super().__init__(f"barrier argument psi - f = {gap:.3e} is not positive")
        self.gap = gap
