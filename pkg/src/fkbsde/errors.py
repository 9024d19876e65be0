"""Exception hierarchy shared by all fkbsde modules."""


class FkbsdeError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(FkbsdeError):
    """Operands have inconsistent truncation dimensions."""


class SimulationError(FkbsdeError):
    """A simulated path produced a non-finite state."""

    def __init__(self, path: int, step: int):
        self.path = path
        self.step = step
        super().__init__(f"non-finite state on path {path} at step {step}")


class GammaOverflowError(FkbsdeError):
    """The exponential weight process overflowed."""

    def __init__(self, path: int, step: int):
        self.path = path
        self.step = step
        super().__init__(
            f"exponential weight overflowed on path {path} at step {step}"
        )


class RegressionError(FkbsdeError):
    """Regression system too ill-conditioned to solve."""

    def __init__(self, step: int, condition: float):
        self.step = step
        self.condition = condition
        super().__init__(
            f"regression at step {step} has condition number {condition:.3g}"
        )


class PreconditionError(FkbsdeError):
    """A theorem precondition was violated on the sampled ensemble."""


class LipschitzAuditError(FkbsdeError):
    """A declared Lipschitz or growth constant failed the probe audit."""


class GridAlignmentError(FkbsdeError):
    """A requested time does not lie on the discretization grid."""


class OracleDomainError(FkbsdeError):
    """The deterministic reference solver does not cover this problem."""


class PicardDivergenceError(FkbsdeError):
    """The nonlinear sweep of the finite-difference solver did not converge."""

    def __init__(self, step: int, residual: float):
        self.step = step
        self.residual = residual
        super().__init__(
            f"nonlinear sweep stalled at time step {step} (residual {residual:.3g})"
        )


class UnknownTagError(FkbsdeError):
    """A registry lookup used an unknown name."""


class ConfigError(FkbsdeError):
    """A run configuration failed to parse or validate."""
