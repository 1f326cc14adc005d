"""Exception types shared across the package."""


class FinslerError(Exception):
    """Base class for package-specific failures."""


class ConvexityViolation(FinslerError):
    """A fundamental tensor came out non positive definite."""


class SeparationViolation(FinslerError):
    """The leading Christoffel eigenvalue is not separated from the rest."""


class NumericError(FinslerError):
    """An iterative solver failed to converge.

    The best value reached so far, if any, is attached as ``best``.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class TopologyError(FinslerError):
    """The oracle graph is disconnected or a query point cannot be linked."""


class ChartFailure(FinslerError):
    """No boundary-point tuple produced an invertible distance chart."""

    def __init__(self, message, best_det=None):
        super().__init__(message)
        self.best_det = best_det


class InsufficientCone(FinslerError):
    """Too few certified covectors to interpolate the dual norm."""


class ConstructionImpossible(FinslerError):
    """The perturbation generator found no room outside the good set."""
