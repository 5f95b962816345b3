"""Exception types raised by the inference engine."""


class PsccaError(Exception):
    """Base class for all package errors."""


class DimensionError(PsccaError, ValueError):
    """Array shapes are mutually inconsistent."""


class DomainError(PsccaError, ValueError):
    """A numeric argument lies outside the domain of a density or transform."""


class SingularMatrixError(PsccaError, ArithmeticError):
    """A matrix that must be positive definite is not (numerically)."""


class SliceSamplingError(PsccaError, RuntimeError):
    """The slice sampler exhausted its doubling budget."""


class TruncatedNormalError(PsccaError, RuntimeError):
    """The positive-truncated normal sampler could not produce a draw."""


class CountFileError(PsccaError, ValueError):
    """A count matrix file is malformed; the message names the line and column."""
