"""Exception hierarchy shared across the package."""


class FastKFError(Exception):
    """Base class for all errors raised by fastkf."""


class ConfigError(FastKFError, ValueError):
    """Invalid experiment configuration; ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class EmbeddingError(FastKFError):
    """Circulant embedding stayed indefinite after the maximum padding."""


class UnsupportedModeError(FastKFError):
    """Operation not available for the operator's storage mode."""


class ConvergenceError(FastKFError):
    """Iterative solver stopped before reaching the requested tolerance."""

    def __init__(self, message: str, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"{message} (relative residual {residual:.3e} after {iterations} iterations)")


class DomainError(FastKFError, ValueError):
    """Input outside the domain of a transform; ``index`` is the first offender."""

    def __init__(self, message: str, index: int):
        self.index = index
        super().__init__(f"{message} (first offending index {index})")


class RankCollapseError(FastKFError):
    """Every sketch column was dropped during orthonormalization."""


class DegenerateRayError(FastKFError, ValueError):
    """Source and receiver coincide."""


class InnovationError(FastKFError):
    """Innovation covariance is not positive definite."""
