"""Dense symmetric-matrix kernels shared by every fitting routine.

All functions are pure: they validate their input, never mutate it, and
are safe to call concurrently.  Determinants are always handled in log
space, and eigenvector signs follow a fixed convention so that
serialized models reproduce bit-for-bit across runs.
"""

from typing import NamedTuple

import numpy as np
from scipy.linalg.lapack import dpotrf

from .errors import NotPositiveDefiniteError, NotSymmetricError, SingularMatrixError

#: Relative eigenvalue floor used by :func:`inv_sqrt` when none is given;
#: scaled by trace(m)/dim so it is invariant to the data's units.
DEFAULT_FLOOR_SCALE = 1e-12


class EigenPairs(NamedTuple):
    """Eigendecomposition of a symmetric matrix.

    ``values`` are ascending; ``vectors`` holds orthonormal columns with
    the largest-magnitude component of each column made nonnegative.
    """

    values: np.ndarray
    vectors: np.ndarray


def check_symmetric(m, tol=0.0, name="matrix"):
    """Validate a dense symmetric matrix and return it as float64.

    Parameters
    ----------
    m : array_like, shape (d, d)
        Candidate matrix.
    tol : float
        Maximum allowed absolute asymmetry ``|m - m.T|``.
    name : str
        Label used in error messages.

    Raises
    ------
    NotSymmetricError
        If ``m`` is not square, not finite, or not symmetric within ``tol``.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise NotSymmetricError(f"{name} must be square, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NotSymmetricError(f"{name} contains non-finite entries")
    if m.size and np.max(np.abs(m - m.T)) > tol:
        raise NotSymmetricError(f"{name} is not symmetric within {tol!r}")
    return m


def symmetrize(m):
    """Return ``(m + m.T) / 2``, removing round-off asymmetry."""
    m = np.asarray(m, dtype=np.float64)
    return 0.5 * (m + m.T)


def sym_eig(m) -> EigenPairs:
    """Eigendecomposition of a symmetric matrix with deterministic signs.

    Eigenvalues come back ascending.  Each eigenvector is flipped, if
    necessary, so that its largest-magnitude component is nonnegative;
    this makes the decomposition reproducible across LAPACK builds.

    Parameters
    ----------
    m : array_like, shape (d, d)
        Symmetric matrix with finite entries.

    Returns
    -------
    EigenPairs
    """
    m = check_symmetric(m, tol=0.0, name="sym_eig input")
    values, vectors = np.linalg.eigh(m)
    lead = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[lead, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return EigenPairs(values=values, vectors=vectors * signs)


def inv_sqrt(m, floor=None):
    """Inverse square root of a symmetric PSD matrix, with spectral floor.

    Eigenvalues below ``floor`` are clamped up to it before inversion, so
    rank-deficient inputs yield a large-but-finite result instead of
    blowing up.

    Parameters
    ----------
    m : array_like, shape (d, d)
        Symmetric positive semi-definite matrix.
    floor : float, optional
        Strictly positive eigenvalue floor.  Defaults to
        ``1e-12 * trace(m) / d``.

    Returns
    -------
    ndarray, shape (d, d)
        Symmetric positive definite matrix ``W`` with ``W @ m @ W ~= I``
        on the non-floored subspace.

    Raises
    ------
    NotPositiveDefiniteError
        If an eigenvalue falls below ``-10 * floor`` (input not PSD).
    SingularMatrixError
        If no valid floor can be derived (``trace(m) <= 0``).
    """
    m = check_symmetric(m, tol=0.0, name="inv_sqrt input")
    if floor is None:
        trace = float(np.trace(m))
        if trace <= 0.0:
            raise SingularMatrixError(
                "cannot derive a spectral floor: matrix trace is not positive"
            )
        floor = DEFAULT_FLOOR_SCALE * trace / m.shape[0]
    if floor <= 0.0:
        raise ValueError("floor must be strictly positive")
    values, vectors = sym_eig(m)
    if values[0] < -10.0 * floor:
        raise NotPositiveDefiniteError(
            f"matrix is not PSD: eigenvalue {values[0]:.6g} below -10*floor"
        )
    clipped = np.maximum(values, floor)
    return symmetrize((vectors * clipped ** -0.5) @ vectors.T)


def chol_lower(m):
    """Lower Cholesky factor ``L`` with ``L @ L.T = m``.

    Parameters
    ----------
    m : array_like, shape (d, d)
        Symmetric positive definite matrix.

    Raises
    ------
    NotPositiveDefiniteError
        If factorization fails; ``pivot`` carries the one-based index of
        the failing leading minor.
    """
    m = check_symmetric(m, tol=0.0, name="chol_lower input")
    if m.shape[0] == 0:
        return m.copy()
    c, info = dpotrf(m, lower=1, clean=1, overwrite_a=0)
    if info > 0:
        raise NotPositiveDefiniteError(
            f"matrix is not positive definite: pivot {info} failed", pivot=int(info)
        )
    if info < 0:
        raise ValueError(f"illegal value in argument {-info} of Cholesky")
    return c


def log_det(m):
    """Log-determinant of a symmetric positive definite matrix.

    Computed as the sum of log eigenvalues; raw determinants overflow
    already at moderate dimension, so they are never formed.

    Raises
    ------
    SingularMatrixError
        If any eigenvalue is ``<= 0``.
    """
    m = check_symmetric(m, tol=0.0, name="log_det input")
    values = np.linalg.eigvalsh(m)
    if m.shape[0] and values[0] <= 0.0:
        raise SingularMatrixError(
            f"matrix is singular: smallest eigenvalue {values[0]:.6g} <= 0"
        )
    return float(np.sum(np.log(values)))
