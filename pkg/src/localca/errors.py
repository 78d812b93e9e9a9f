"""Exception types raised by the numerical routines.

The CLI maps these onto exit codes: :class:`DataError` -> 3,
:class:`NumericalError` (and subclasses) -> 4.
"""


class NumericalError(Exception):
    """Base class for numerical failures (singular or indefinite matrices)."""


class NotSymmetricError(NumericalError):
    """Input matrix is not symmetric or contains non-finite entries."""


class NotPositiveDefiniteError(NumericalError):
    """Matrix failed a positive-definiteness check.

    Attributes
    ----------
    pivot : int or None
        One-based index of the failing Cholesky pivot, when known.
    """

    def __init__(self, message, pivot=None):
        super().__init__(message)
        self.pivot = pivot


class SingularMatrixError(NumericalError):
    """Matrix is singular where an invertible one is required."""


class DegenerateMetricError(NumericalError):
    """The learned metric collapsed (singular kernel covariance)."""


class SplitUnboundedError(NumericalError):
    """Gaussian/Parzen split objective is unbounded below.

    Raised when either covariance handed to the split solver is not
    strictly positive definite, in which case no finite optimum exists.
    """


class DataError(Exception):
    """Malformed or inconsistent input data (bad CSV, NaNs, shape mismatch)."""
