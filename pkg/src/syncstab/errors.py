"""Exception types raised across the package."""


class SyncStabError(Exception):
    """Base class for every error raised by the package."""


class QuadratureNotConverged(SyncStabError):
    pass


class DiagonalVanishing(SyncStabError):
    pass


class NonPeriodicUnbounded(SyncStabError):
    """The sampled seminorm grew across diagonal windows; the value is a lower bound only."""

    def __init__(self, lower_bound):
        super().__init__(f"seminorm grows along the diagonal (lower bound {lower_bound:.6g})")
        self.lower_bound = lower_bound


class MaxStepsExceeded(SyncStabError):
    pass


class StepUnderflow(SyncStabError):
    pass


class NoCrossing(SyncStabError):
    pass


class HstabViolated(SyncStabError):
    def __init__(self, message, residual=None, alpha=None):
        super().__init__(message)
        self.residual = residual
        self.alpha = alpha


class BetaOutOfRange(SyncStabError):
    pass


class HNearZero(SyncStabError):
    pass


class NotConverged(SyncStabError):
    """An iterative estimate did not settle; ``sequence`` holds the approximants."""

    def __init__(self, message, sequence=None):
        super().__init__(message)
        self.sequence = sequence


class NotFound(SyncStabError):
    pass


class PsiVanishing(SyncStabError):
    pass


class CertificationFailed(SyncStabError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NewtonDiverged(SyncStabError):
    def __init__(self, message, best=None, residual=None):
        super().__init__(message)
        self.best = best
        self.residual = residual


class SingularShootingJacobian(SyncStabError):
    pass


class KernelViolation(SyncStabError):
    pass


class RadiusExceeded(SyncStabError):
    pass


class OrbitMisaligned(SyncStabError):
    pass
