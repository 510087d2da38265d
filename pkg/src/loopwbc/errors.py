"""Exception types raised across the package."""


class LoopWbcError(Exception):
    """Base class for all package errors."""


class ParseError(LoopWbcError):
    pass


class ValidationError(LoopWbcError):
    pass


class DegenerateDirection(LoopWbcError):
    pass


class DegenerateContact(LoopWbcError):
    pass


class SingularConstraintSystem(LoopWbcError):
    def __init__(self, cond: float):
        super().__init__(f"constraint system is singular (condition number {cond:.3e})")
        self.cond = cond


class Infeasible(LoopWbcError):
    def __init__(self, message: str, level: int | None = None, violation: float | None = None):
        super().__init__(message)
        self.level = level
        self.violation = violation


class MaxIterations(LoopWbcError):
    pass


class NotStabilizable(LoopWbcError):
    pass


class NoConvergence(LoopWbcError):
    pass


class DegeneratePendulum(LoopWbcError):
    pass


class NoContactForce(LoopWbcError):
    pass


class OutOfTerrain(LoopWbcError):
    pass


class EnergyBlowup(LoopWbcError):
    pass


class ScenarioFailed(LoopWbcError):
    def __init__(self, reason: str, time: float):
        super().__init__(f"{reason} at t={time:.4f} s")
        self.reason = reason
        self.time = time


class RankWarning(UserWarning):
    """A task is rank deficient on the subspace left by higher priorities."""
