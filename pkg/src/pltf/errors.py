"""Exception types shared across the package."""


class PltfError(Exception):
    """Base class for all package-specific errors."""


class TiesInKnots(PltfError):
    """Knot sequence contains duplicate values."""


class TooFewPoints(PltfError):
    """Not enough points for the requested polynomial order."""


class NotPositiveDefinite(PltfError):
    """A banded Cholesky factorization hit a non-positive pivot."""


class DimensionMismatch(PltfError):
    """Array shapes are inconsistent with the fitted model."""


class FoldTooSmall(PltfError):
    """Cross-validation folds would be too small for the sample size."""


class NotConverged(PltfError):
    """Reference solver failed to reach its target accuracy."""
