"""Exception and warning types shared across the package.

Two broad families matter to callers: ``ValidationError`` covers bad user
input (shapes, ranks, subset specifications, file formats) and maps to CLI
exit code 2; ``NumericalError`` covers computations that degenerate at
runtime (singular matrices, boundary variances, zero spread) and maps to
exit code 3.
"""


class CookscaleError(Exception):
    """Base class for all package-specific errors."""


class ValidationError(CookscaleError, ValueError):
    """Invalid user input."""


class NumericalError(CookscaleError, ArithmeticError):
    """A computation failed for numerical reasons."""


class RankDeficientDesign(ValidationError):
    """Design matrix does not have full column rank."""


class DimensionMismatch(ValidationError):
    """Arguments describe incompatible shapes or parameter families."""


class SubsetTooLarge(ValidationError):
    """Deleting the subset leaves too little data to refit."""


class NonIdentifiable(ValidationError):
    """The variance components cannot be separated on this data."""


class NotGaussianModel(ValidationError):
    """The requested computation is only available for the Gaussian models."""


class DegenerateVariance(NumericalError):
    """A residual variance estimate collapsed to (numerical) zero."""


class LeverageOne(NumericalError):
    """A deletion leverage eigenvalue reached one; the subset carries a
    direction of the design entirely."""


class SingularCovariance(NumericalError):
    """A covariance or information matrix is not positive definite."""


class NotInvertible(NumericalError):
    """A matrix solve failed."""


class ZeroSpread(NumericalError):
    """A scale estimate used for standardization is zero."""


class DegenerateReplicates(NumericalError):
    """All bootstrap replicates produced the same value."""


class NonConvergenceWarning(UserWarning):
    """An iterative fit stopped at max_iter with the change still above tol."""
