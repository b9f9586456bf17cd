"""Exception types raised across the package."""


class TaylorPNError(Exception):
    """Base class for all package errors."""


class DomainError(TaylorPNError, ValueError):
    """A point lies outside the domain ``||x - a|| < r`` of a Taylor kernel."""


class SingularModel(TaylorPNError):
    """Noiseless data at an index whose kernel coefficient vanishes."""


class IllConditioned(TaylorPNError, ArithmeticError):
    """A linear solve failed even after jitter was added."""


class Diverges(TaylorPNError, ArithmeticError):
    """A kernel series did not converge within the summation budget."""


class DegenerateData(TaylorPNError, ValueError):
    """All residual derivatives vanish, so the likelihood has no maximiser."""


class Unstable(TaylorPNError, ArithmeticError):
    """A closed-form estimate would divide by a (numerically) vanishing datum."""


class NoConvergence(TaylorPNError, ArithmeticError):
    """An iterative procedure hit its iteration cap."""


class CholeskyFailure(TaylorPNError, ArithmeticError):
    """A covariance could not be factorised even after jitter."""


class NonFinite(TaylorPNError, ArithmeticError):
    """A user-supplied function returned NaN or infinity."""


class StepError(TaylorPNError):
    """Wraps an error raised at a particular step of a recursion."""

    def __init__(self, step, error):
        super().__init__(f"step {step}: {type(error).__name__}: {error}")
        self.step = step
        self.error = error
