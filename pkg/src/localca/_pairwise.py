"""Blockwise pairwise-kernel computations shared by the fitting routines.

Everything here works on a linearly transformed copy of the data: the
Gaussian kernel weight between two points is ``exp(-0.5 * ||T'x_i - T'x_j||^2)``
for a transform ``T`` whose Gram matrix ``T @ T.T`` is the kernel
precision.  Row blocks keep the working set at ``O(block * n)`` so the
full n-by-n weight matrix is never materialized unless asked for.
"""

import numpy as np

#: Default number of rows processed per block.
BLOCK_ROWS = 512


def squared_distances(a, b):
    """All-pairs squared Euclidean distances between rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sq_a = np.einsum("ij,ij->i", a, a)
    sq_b = np.einsum("ij,ij->i", b, b)
    d2 = sq_a[:, None] + sq_b[None, :] - 2.0 * (a @ b.T)
    np.maximum(d2, 0.0, out=d2)
    return d2


def _logsumexp_rows(scores):
    """Row-wise log-sum-exp; rows that are entirely ``-inf`` yield ``-inf``."""
    peak = np.max(scores, axis=1)
    safe = np.where(np.isfinite(peak), peak, 0.0)
    total = np.sum(np.exp(scores - safe[:, None]), axis=1)
    out = safe + np.log(total)
    out[~np.isfinite(peak)] = -np.inf
    return out


def loo_kernel_pass(x, transform, need_scatter=True, need_entropy=False,
                    block=BLOCK_ROWS):
    """One fused leave-one-out pass over all pairs.

    For each row ``i`` the kernel scores ``s_ij = -0.5 ||y_i - y_j||^2``
    (``y = x @ transform``, self term excluded) are normalized in log
    space.  A single sweep yields everything the EM update needs.

    Parameters
    ----------
    x : ndarray, shape (n, d)
        Data matrix.
    transform : ndarray, shape (d, k)
        Columns of the kernel transform; the kernel precision is
        ``transform @ transform.T``.  ``k = 0`` gives uniform weights.
    need_scatter : bool
        Also accumulate the responsibility-weighted difference scatter
        ``sum_ij lam_ij (x_i - x_j)(x_i - x_j)^T``.
    need_entropy : bool
        Also accumulate ``sum_ij lam_ij log lam_ij``.
    block : int
        Rows per block.

    Returns
    -------
    dict with keys
        ``lse`` : ndarray (n,) -- per-row log-sum-exp of the scores;
        ``scatter`` : ndarray (d, d) or None;
        ``entropy`` : float or None.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    y = x @ transform
    sq_y = np.einsum("ij,ij->i", y, y)

    lse = np.empty(n)
    col_sums = np.zeros(n) if need_scatter else None
    cross = np.zeros((d, d)) if need_scatter else None
    entropy = 0.0 if need_entropy else None

    for start in range(0, n, block):
        stop = min(start + block, n)
        d2 = sq_y[start:stop, None] + sq_y[None, :] - 2.0 * (y[start:stop] @ y.T)
        np.maximum(d2, 0.0, out=d2)
        scores = -0.5 * d2
        rows = np.arange(start, stop)
        scores[rows - start, rows] = -np.inf
        row_lse = _logsumexp_rows(scores)
        lse[start:stop] = row_lse

        if need_scatter or need_entropy:
            lam = np.exp(scores - row_lse[:, None])
            lam[rows - start, rows] = 0.0
            if need_scatter:
                col_sums += lam.sum(axis=0)
                cross += x[start:stop].T @ (lam @ x)
            if need_entropy:
                pos = lam > 0.0
                entropy += float(np.sum(lam[pos] * np.log(lam[pos])))

    out = {"lse": lse, "scatter": None, "entropy": entropy}
    if need_scatter:
        gram = x.T @ x
        scatter = gram + (x.T * col_sums) @ x - cross - cross.T
        out["scatter"] = 0.5 * (scatter + scatter.T)
    return out


def cross_kernel_lse(points, support, transform, exclude_diagonal=False,
                     block=BLOCK_ROWS):
    """Per-row log-sum-exp of kernel scores of ``points`` against ``support``.

    With ``exclude_diagonal`` the two sets must be the same array and the
    self pair is dropped (the leave-one-out evaluation).
    """
    points = np.asarray(points, dtype=np.float64)
    support = np.asarray(support, dtype=np.float64)
    yp = points @ transform
    ys = support @ transform
    sq_p = np.einsum("ij,ij->i", yp, yp)
    sq_s = np.einsum("ij,ij->i", ys, ys)
    m = points.shape[0]
    lse = np.empty(m)
    for start in range(0, m, block):
        stop = min(start + block, m)
        d2 = sq_p[start:stop, None] + sq_s[None, :] - 2.0 * (yp[start:stop] @ ys.T)
        np.maximum(d2, 0.0, out=d2)
        scores = -0.5 * d2
        if exclude_diagonal:
            rows = np.arange(start, stop)
            scores[rows - start, rows] = -np.inf
        lse[start:stop] = _logsumexp_rows(scores)
    return lse
