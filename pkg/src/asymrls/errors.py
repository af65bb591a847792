"""Exception types raised across the package."""


class RLSError(Exception):
    """Base class for all package errors."""


class ConfigError(RLSError, ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, message, path=None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class SingularPoint(RLSError, ValueError):
    pass


class OutOfDomain(RLSError, ValueError):
    pass


class NonConvergence(RLSError, RuntimeError):
    """Iterative routine hit its budget. ``residual`` and ``best`` carry diagnostics."""

    def __init__(self, message, residual=None, best=None):
        self.residual = residual
        self.best = best
        super().__init__(message)


class Diverged(RLSError, RuntimeError):
    def __init__(self, message, iteration=None):
        self.iteration = iteration
        super().__init__(message)


class QuadratureBudgetExceeded(RLSError, RuntimeError):
    pass


class NonConvexUnsupported(RLSError, ValueError):
    pass


class NegativeTheta2(RLSError, RuntimeError):
    """The decoupled noise variance went non-positive (replica-symmetry trouble)."""


class DenominatorNonpositive(RLSError, ValueError):
    pass


class AllSolvesFailed(RLSError, RuntimeError):
    pass


class UnsupportedMatrix(RLSError, ValueError):
    pass
