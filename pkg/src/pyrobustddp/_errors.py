"""Exceptions raised by pyrobustddp.

All errors derive from :class:`RobustDdpError`. Input validation problems additionally derive from
:class:`ValueError`, numerical problems from :class:`ArithmeticError`, so callers can catch either family.
"""


class RobustDdpError(Exception):
    """Base class of all pyrobustddp errors."""


class DimensionMismatch(RobustDdpError, ValueError):
    """An evaluator or matrix does not have the declared dimensions."""


class NonSymmetricTerminalCost(RobustDdpError, ValueError):
    """The terminal cost is not symmetric or not positive semi-definite, or a terminal value lies below it."""


class RankDeficientFactor(RobustDdpError, ValueError):
    """A multiplier factor does not have full row rank."""


class SingularPivot(RobustDdpError, ArithmeticError):
    """The pivot block of a Schur complement is (numerically) singular."""


class WrongSign(RobustDdpError, ValueError):
    """The pivot block does not have the declared definiteness."""


class NotConcaveInW(RobustDdpError, ArithmeticError):
    """The inner maximization over the disturbance is unbounded."""


class SingularP(RobustDdpError, ArithmeticError):
    """The outer matrix of a dualization is singular."""


class RankDeficientW1(RobustDdpError, ValueError):
    """The projection ``W1`` of the one-way dualization does not have full column rank."""


class NonFiniteDerivative(RobustDdpError, ArithmeticError):
    """A derivative evaluated to a non-finite value."""


class NonAffineExpression(RobustDdpError, ValueError):
    """An LMI expression is not affine in the decision variables."""


class UnknownVariable(RobustDdpError, KeyError):
    """An expression or assignment references a variable that was not declared."""


class NumericalFailure(RobustDdpError, ArithmeticError):
    """The SDP solver did not converge or produced an unusable point."""


class Infeasible(RobustDdpError, ArithmeticError):
    """The LMI problem has no strictly feasible point."""

    def __init__(self, message: str, certificate: list | None = None):
        super().__init__(message)
        self.certificate = certificate


class NotApplicable(RobustDdpError, ValueError):
    """A convexification strategy cannot be applied to the given data."""


class RegularityViolated(RobustDdpError, ValueError):
    """The positivity requirement of the dualization fails beyond the perturbation budget."""


class RankDeficientW12(RobustDdpError, ValueError):
    """The disturbance projection ``W12`` of the canonical strategy is rank deficient."""


class PrimalCheckFailed(NumericalFailure):
    """A solved backward step does not satisfy the primal robust Bellman inequality."""


class BackwardInfeasible(RobustDdpError, ArithmeticError):
    """A backward pass found no certificate at some timestep."""

    def __init__(self, timestep: int, iteration: int | None = None, reason: str = ''):
        where = f'timestep {timestep}' if iteration is None else f'timestep {timestep} in iteration {iteration}'
        super().__init__(f'Backward pass infeasible at {where}{": " + reason if reason else ""}')
        self.timestep = timestep
        self.iteration = iteration


class MaxItersExceeded(RobustDdpError, RuntimeError):
    """The robust DDP loop stopped before the trajectory converged."""


class NonFiniteState(RobustDdpError, ArithmeticError):
    """The dynamics produced a non-finite state."""


class WellPosednessFailure(RobustDdpError, ArithmeticError):
    """The uncertainty loop ``w = Delta(g(x, u, w))`` has no converging fixed point."""


class SchemaVersionMismatch(RobustDdpError, ValueError):
    """A serialized document has an unsupported schema version."""


class ConfigError(RobustDdpError, ValueError):
    """A run configuration is malformed."""
