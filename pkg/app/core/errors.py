"""
Exception hierarchy for the copula pipeline.
"""


class CopulaPipelineError(Exception):
    """Base class for all pipeline errors."""


class CopulaDomainError(CopulaPipelineError, ValueError):
    """Argument outside the open unit interval or invalid copula parameter."""


class UnsupportedSignError(CopulaDomainError):
    """Kendall tau sign not representable by the (unrotated) family."""


class StructureError(CopulaPipelineError, ValueError):
    """Malformed factor structure: link counts, groups or vine edges."""


class ConvergenceError(CopulaPipelineError, RuntimeError):
    """A numerical solver or optimizer failed to converge."""


class MarginalFitError(ConvergenceError):
    """All multi-start marginal optimizations failed or the series is degenerate."""


class QuadratureError(CopulaPipelineError, ArithmeticError):
    """Latent-space quadrature produced a non-finite value."""


class VBDivergenceError(ConvergenceError):
    """Variational optimization diverged or produced too many non-finite draws."""

    def __init__(self, message: str, iteration: int = -1, best_elbo: float = float("nan")):
        super().__init__(message)
        self.iteration = iteration
        self.best_elbo = best_elbo


class NoRootError(CopulaPipelineError, ValueError):
    """No default probability in (0, 1) reproduces the quoted spread."""


class InsufficientHistoryError(CopulaPipelineError, ValueError):
    """Not enough observations for the requested window."""


class PanelFormatError(CopulaPipelineError, ValueError):
    """Input spread file is malformed."""


class DensityUnderflowError(CopulaPipelineError, ArithmeticError):
    """Predictive density of a realized row underflowed to zero."""
