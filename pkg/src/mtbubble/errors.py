"""Exception and warning types shared across the package."""


class MTBubbleError(Exception):
    """Base class for all numerical failures raised by the package."""


class SingularPole(MTBubbleError):
    """Evaluation point coincides with the Green's function pole."""


class TruncationFailure(MTBubbleError):
    """A series or extrapolation could not be certified at the requested tolerance."""


class SeparationViolation(MTBubbleError):
    """Two configuration points are closer than the separation floor."""


class GridTooCoarse(MTBubbleError):
    """The grid does not resolve the bubble scale."""


class QuadratureFailure(MTBubbleError):
    """Adaptive quadrature did not reach its tolerance."""


class NoConvergence(MTBubbleError):
    """Newton iteration hit its cap without meeting the tolerance."""


class LinearSolveStagnation(MTBubbleError):
    """The Krylov solver stagnated."""


class EigensolverFailure(MTBubbleError):
    """The sparse eigensolver did not converge."""


class OverflowGuard(MTBubbleError):
    """lambda * v**2 exceeded the overflow threshold of exp."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class UnresolvableScale(UserWarning):
    """A bubble scale is below what any grid can resolve."""
