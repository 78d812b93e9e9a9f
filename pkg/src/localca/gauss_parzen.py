"""Semi-parametric product of a Gaussian and a Parzen windows density.

The data is pushed through an invertible linear map split into two
column blocks: coordinates under ``b_g`` are modelled as a standard
multivariate Gaussian (the noise part), coordinates under ``b_l``
through kernel density estimation with an identity kernel (the signal
part).  Fitting alternates responsibility updates with a closed-form
solver that re-partitions directions between the two blocks via a
generalized eigendecomposition of the (global, local) covariance pair.
A search variant probes more aggressive re-partitions to escape the
local optima the plain iteration is prone to.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from . import matrix_core
from ._pairwise import cross_kernel_lse, loo_kernel_pass
from .errors import DataError, DegenerateMetricError, SingularMatrixError, SplitUnboundedError
from .lca import LOG_2PI, FitConfig, as_dataset, default_reg_nu

logger = logging.getLogger(__name__)

#: Probe length (iterations) used by the dimension search before scoring.
DEFAULT_PROBE_ITERS = 40


class SplitResult(NamedTuple):
    """Closed-form optimum of the two-block trace/log-det objective.

    ``eigvals`` holds the full ascending spectrum of
    ``inv_sqrt(m1) @ m2 @ inv_sqrt(m1)``; the first ``d2`` entries
    (those ``< 1``) belong to the columns of ``b_l`` in order, the rest
    to ``b_g``.
    """

    b_g: np.ndarray
    b_l: np.ndarray
    eigvals: np.ndarray
    objective_value: float


@dataclass
class GaussParzenModel:
    """Fitted Gaussian/Parzen product model.

    ``b_g`` and ``b_l`` are the Gaussian-part and Parzen-part column
    blocks of an invertible square transform; ``mu`` is the Gaussian
    mean in the original coordinates.  Either block may be empty.
    """

    b_g: np.ndarray
    b_l: np.ndarray
    mu: np.ndarray
    loo_nll: float = math.nan
    bound_trace: np.ndarray = field(default_factory=lambda: np.empty(0))
    split_eigvals: np.ndarray | None = None
    reg_nu_local: float = 0.0
    reg_nu_global: float = 0.0
    n_iter: int = 0
    converged: bool = False
    config: FitConfig = field(default_factory=FitConfig)

    @property
    def dim(self):
        return self.b_g.shape[0]

    @property
    def d1(self):
        return self.b_g.shape[1]

    @property
    def d2(self):
        return self.b_l.shape[1]


def _strict_spd_eig(m, name):
    m = matrix_core.check_symmetric(m, tol=0.0, name=name)
    values, vectors = matrix_core.sym_eig(m)
    if m.shape[0] and values[0] <= 0.0:
        raise SplitUnboundedError(
            f"{name} is not positive definite (eigenvalue {values[0]:.6g}); "
            "split objective is unbounded below"
        )
    return values, vectors


def split_solve(m1, m2):
    """Optimal Gaussian/Parzen column split for a covariance pair.

    Minimizes ``tr(b_g' m1 b_g) + tr(b_l' m2 b_l) - log det(b_g b_g' +
    b_l b_l')`` over all invertible column splits.  Directions whose
    generalized eigenvalue (of ``inv_sqrt(m1) @ m2 @ inv_sqrt(m1)``) is
    ``>= 1`` go to the Gaussian block, the rest to the Parzen block with
    an inverse-root eigenvalue rescaling.

    Parameters
    ----------
    m1, m2 : ndarray, shape (d, d)
        Symmetric positive definite matrices.

    Returns
    -------
    SplitResult

    Raises
    ------
    SplitUnboundedError
        If either matrix is not strictly positive definite.
    """
    w1, v1 = _strict_spd_eig(m1, "m1")
    _strict_spd_eig(m2, "m2")
    inv_root = (v1 * w1 ** -0.5) @ v1.T
    log_det_m1 = float(np.sum(np.log(w1)))
    paired = matrix_core.symmetrize(inv_root @ np.asarray(m2, dtype=np.float64) @ inv_root)
    eigvals, vectors = matrix_core.sym_eig(paired)
    gaussian = eigvals >= 1.0
    d = eigvals.shape[0]
    b_g = inv_root @ vectors[:, gaussian]
    b_l = inv_root @ (vectors[:, ~gaussian] * eigvals[~gaussian] ** -0.5)
    objective = d + log_det_m1 + float(np.sum(np.log(eigvals[~gaussian])))
    return SplitResult(b_g=b_g, b_l=b_l, eigvals=eigvals, objective_value=objective)


def split_objective(b_g, b_l, m1, m2):
    """Direct evaluation of the split objective at an arbitrary split."""
    b_g = np.asarray(b_g, dtype=np.float64)
    b_l = np.asarray(b_l, dtype=np.float64)
    gram = matrix_core.symmetrize(b_g @ b_g.T + b_l @ b_l.T)
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0:
        return math.inf
    t1 = float(np.einsum("ij,jk,ki->", b_g.T, np.asarray(m1, dtype=np.float64), b_g)) if b_g.size else 0.0
    t2 = float(np.einsum("ij,jk,ki->", b_l.T, np.asarray(m2, dtype=np.float64), b_l)) if b_l.size else 0.0
    return t1 + t2 - float(logdet)


def responsibilities(data, b_l):
    """Row-normalized kernel weights under the Parzen-part transform."""
    x = as_dataset(data, min_rows=2)
    n = x.shape[0]
    y = x @ np.asarray(b_l, dtype=np.float64)
    sq = np.einsum("ij,ij->i", y, y)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (y @ y.T)
    np.maximum(d2, 0.0, out=d2)
    scores = -0.5 * d2
    np.fill_diagonal(scores, -np.inf)
    peak = np.max(scores, axis=1, keepdims=True)
    w = np.exp(scores - peak)
    np.fill_diagonal(w, 0.0)
    return w / w.sum(axis=1, keepdims=True)


def _log_det_gram(b_g, b_l):
    gram = matrix_core.symmetrize(b_g @ b_g.T + b_l @ b_l.T)
    try:
        return matrix_core.log_det(gram)
    except SingularMatrixError as exc:
        raise DegenerateMetricError(f"degenerate split: {exc}") from exc


def gp_nll(data, model, leave_one_out=True, support=None):
    """Negative log-likelihood of points under the product density.

    The density of a point is the product of a Gaussian factor over the
    ``b_g`` coordinates, a Parzen factor over the ``b_l`` coordinates,
    and the shared volume normalizer of the joint transform; everything
    runs in log space.

    Parameters
    ----------
    data : ndarray, shape (m, d)
        Points to score.
    model : GaussParzenModel
    leave_one_out : bool
        Score each point against the remaining ones (requires ``data``
        itself as support and ``m >= 2`` when the Parzen block is
        nonempty); otherwise the Parzen mixture averages over all of
        ``support`` with weight ``1/len(support)``.
    support : ndarray, optional
        Parzen support set for ``leave_one_out=False``; defaults to
        ``data``.

    Returns
    -------
    float
        Sum of per-point negative log densities.
    """
    x = as_dataset(data, min_rows=1)
    b_g = np.asarray(model.b_g, dtype=np.float64)
    b_l = np.asarray(model.b_l, dtype=np.float64)
    mu = np.asarray(model.mu, dtype=np.float64)
    d = x.shape[1]
    if b_g.shape[0] != d or b_l.shape[0] != d:
        raise DataError("model transform dimension does not match data")
    log_det_gram = _log_det_gram(b_g, b_l)

    n_points = x.shape[0]
    quad_g = 0.0
    if b_g.shape[1]:
        zg = (x - mu) @ b_g
        quad_g = 0.5 * float(np.einsum("ij,ij->", zg, zg))

    parzen = 0.0
    if b_l.shape[1]:
        if leave_one_out:
            if support is not None and support is not data:
                raise DataError("leave-one-out scoring uses the data itself as support")
            if n_points < 2:
                raise DataError("leave-one-out scoring needs at least 2 points")
            lse = cross_kernel_lse(x, x, b_l, exclude_diagonal=True)
            denom = n_points - 1
        else:
            sup = x if support is None else as_dataset(support, min_rows=1, name="support")
            lse = cross_kernel_lse(x, sup, b_l, exclude_diagonal=False)
            denom = sup.shape[0]
        parzen = float(-np.sum(lse)) + n_points * math.log(denom)

    const = n_points * (0.5 * d * LOG_2PI - 0.5 * log_det_gram)
    return const + quad_g + parzen


def nll_upper_bound(data, lam, b_g, b_l, mu, c_g=None, c_l=None):
    """EM upper bound on the leave-one-out :func:`gp_nll`.

    For any row-stochastic zero-diagonal ``lam`` the returned value
    dominates ``gp_nll(data, model, leave_one_out=True)``, with equality
    when ``lam`` equals :func:`responsibilities` for the same ``b_l``.
    Passing regularized ``c_g``/``c_l`` gives the regularized objective
    the fitting loop actually descends.
    """
    x = as_dataset(data, min_rows=2)
    lam = np.asarray(lam, dtype=np.float64)
    b_g = np.asarray(b_g, dtype=np.float64)
    b_l = np.asarray(b_l, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    n, d = x.shape
    if c_g is None:
        centered = x - mu
        c_g = matrix_core.symmetrize(centered.T @ centered / n)
    if c_l is None:
        col_sums = lam.sum(axis=0)
        cross = x.T @ (lam @ x)
        c_l = matrix_core.symmetrize(x.T @ x + (x.T * col_sums) @ x - cross - cross.T) / n
    pos = lam > 0.0
    entropy = float(np.sum(lam[pos] * np.log(lam[pos])))
    t1 = float(np.einsum("ji,jk,ki->", b_g, np.asarray(c_g, dtype=np.float64), b_g)) if b_g.size else 0.0
    t2 = float(np.einsum("ji,jk,ki->", b_l, np.asarray(c_l, dtype=np.float64), b_l)) if b_l.size else 0.0
    core = t1 + t2 - _log_det_gram(b_g, b_l) + d * LOG_2PI
    return 0.5 * n * core + n * math.log(n - 1) + entropy


def _initial_blocks(c_g, inv_root):
    d = c_g.shape[0]
    b_g = np.zeros((d, 0))
    precision = matrix_core.symmetrize(inv_root @ inv_root)
    b_l = matrix_core.chol_lower(precision)
    return b_g, b_l


def fit_gauss(data, cfg=None, nu_global=None, init=None):
    """Fit the product model by alternating responsibilities and splits.

    Starts with every direction assigned to the Parzen block (kernel
    covariance equal to the regularized global covariance), then each
    iteration recomputes kernel responsibilities from the current Parzen
    transform, updates the local covariance, and re-solves the optimal
    column split of the (global, local) pair.  The global covariance and
    the mean stay fixed throughout.  Stops when the relative decrease of
    the EM bound falls below ``cfg.rel_tol``.

    Parameters
    ----------
    data : ndarray, shape (n, d)
    cfg : FitConfig, optional
        ``reg_nu`` regularizes the local covariance.
    nu_global : float, optional
        Regularizer for the global covariance; defaults to the local one.
    init : (b_g, b_l) pair of ndarrays, optional
        Warm-start transform blocks (used by the dimension search).

    Returns
    -------
    GaussParzenModel
    """
    x = as_dataset(data, min_rows=2)
    cfg = cfg or FitConfig()
    n, d = x.shape
    nu_local = cfg.reg_nu if cfg.reg_nu is not None else default_reg_nu(x)
    nu_g = nu_global if nu_global is not None else nu_local

    mu = x.mean(axis=0)
    centered = x - mu
    c_g = matrix_core.symmetrize(centered.T @ centered / n) + nu_g * np.eye(d)
    inv_root = matrix_core.inv_sqrt(c_g)

    if init is None:
        b_g, b_l = _initial_blocks(c_g, inv_root)
    else:
        b_g = np.asarray(init[0], dtype=np.float64)
        b_l = np.asarray(init[1], dtype=np.float64)
        if b_g.shape[0] != d or b_l.shape[0] != d or b_g.shape[1] + b_l.shape[1] != d:
            raise DataError("init blocks must form a d-by-d transform")

    eye = np.eye(d)
    bound_trace = []
    eigvals = None
    converged = False
    iterations = 0
    for it in range(cfg.max_iter):
        res = loo_kernel_pass(x, b_l, need_scatter=True, need_entropy=True)
        c_l = matrix_core.symmetrize(res["scatter"] / n) + nu_local * eye
        split = split_solve(c_g, c_l)
        b_g, b_l, eigvals = split.b_g, split.b_l, split.eigvals
        bound = (
            0.5 * n * (split.objective_value + d * LOG_2PI)
            + n * math.log(n - 1)
            + res["entropy"]
        )
        bound_trace.append(bound)
        iterations = it + 1
        if it > 0:
            decrease = bound_trace[-2] - bound
            if decrease < 0.0:
                logger.warning("EM bound increased by %.3g at iteration %d", -decrease, it)
            if decrease <= cfg.rel_tol * abs(bound_trace[-2]):
                converged = True
                break

    model = GaussParzenModel(
        b_g=b_g,
        b_l=b_l,
        mu=mu,
        bound_trace=np.asarray(bound_trace),
        split_eigvals=eigvals,
        reg_nu_local=nu_local,
        reg_nu_global=nu_g,
        n_iter=iterations,
        converged=converged,
        config=cfg,
    )
    model.loo_nll = gp_nll(x, model, leave_one_out=True)
    return model


def _transfer_columns(model, count):
    """Move the ``count`` most Gaussian-like Parzen columns to the Gaussian block."""
    if count == 0:
        return model.b_g, model.b_l
    d2 = model.d2
    if count > d2:
        raise ValueError("cannot transfer more columns than the Parzen block holds")
    eig_parzen = model.split_eigvals[:d2]
    moved = model.b_l[:, d2 - count:] * np.sqrt(eig_parzen[d2 - count:])
    b_g = np.hstack([model.b_g, moved])
    b_l = model.b_l[:, : d2 - count]
    return b_g, b_l


def fit_gauss_red(data, cfg=None, nu_global=None, probe_iters=DEFAULT_PROBE_ITERS):
    """Fit with a dichotomic search over the Gaussian block size.

    Runs the plain fit for a short probe, then repeatedly transfers the
    most Gaussian-like Parzen columns to the Gaussian block, re-probing
    from the transferred matrices and scoring every candidate by its
    leave-one-out :func:`gp_nll`, with a dichotomic search over the
    number of Gaussian directions until the discrete search hits a local
    optimum.  The winning candidate is then refined to convergence, and
    the result is returned only if it does not score worse than simply
    running the plain fit to convergence.

    Returns
    -------
    GaussParzenModel
    """
    x = as_dataset(data, min_rows=2)
    cfg = cfg or FitConfig()
    probe_cfg = replace(cfg, max_iter=probe_iters)

    base = fit_gauss(x, probe_cfg, nu_global=nu_global)
    d = x.shape[1]
    g0 = base.d1

    probes = {}

    def probe(g):
        if g not in probes:
            if base.split_eigvals is None and g != g0:
                raise DegenerateMetricError("probe fit produced no split spectrum")
            init = _transfer_columns(base, g - g0)
            probes[g] = fit_gauss(x, probe_cfg, nu_global=nu_global, init=init)
        return probes[g]

    lo, hi = g0, d
    while lo < hi:
        mid = (lo + hi) // 2
        if probe(mid).loo_nll <= probe(mid + 1).loo_nll:
            hi = mid
        else:
            lo = mid + 1
    best_g = lo

    selected = probe(best_g)
    final = fit_gauss(x, cfg, nu_global=nu_global, init=(selected.b_g, selected.b_l))
    if best_g != g0:
        incumbent = fit_gauss(x, cfg, nu_global=nu_global, init=(base.b_g, base.b_l))
        if incumbent.loo_nll < final.loo_nll:
            final = incumbent
    return final


def transform(data, model, parzen_only=False):
    """Map points through the model's transform.

    With ``parzen_only`` the points are projected onto the Parzen-part
    coordinates only (the learned signal subspace).
    """
    x = as_dataset(data, min_rows=1)
    if x.shape[1] != model.b_g.shape[0]:
        raise DataError(
            f"data has dimension {x.shape[1]} but model expects {model.b_g.shape[0]}"
        )
    if parzen_only:
        if model.d2 == 0:
            raise DataError("no Parzen dimensions: the model is purely Gaussian")
        return x @ model.b_l
    return x @ np.hstack([model.b_g, model.b_l])
