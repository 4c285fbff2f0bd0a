"""Exception types raised across the package."""


class MVRSError(Exception):
    """Base class for all package errors."""


class DimensionError(MVRSError, ValueError):
    """Covariate and parameter lengths disagree."""


class InvalidInput(MVRSError, ValueError):
    """NaN/Inf or out-of-support values in data or parameters."""


class RateOverflow(MVRSError, OverflowError):
    """Poisson linear predictor too large to exponentiate safely."""


class SingularHessian(MVRSError, ArithmeticError):
    """A (weighted) Hessian or its inverse could not be formed."""


class Diverged(MVRSError, ArithmeticError):
    """Newton iterates escaped to infinity (typically separable logistic data)."""


class DegenerateVariance(MVRSError, ArithmeticError):
    """No stratum has enough draws to estimate a within-stratum variance."""


class DegenerateScores(MVRSError, ArithmeticError):
    """Every influence-function norm is zero, so optimal probabilities are undefined."""
