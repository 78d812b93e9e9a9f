"""Local component analysis: unsupervised kernel-metric learning.

A library and CLI for learning a full Euclidean metric for Parzen
windows density estimation by EM on the leave-one-out log-likelihood,
together with a semi-parametric Gaussian/Parzen product model, a
stochastic large-scale fitting scheme, and the clustering and density
benchmark harnesses built on top of them.
"""

from .errors import (
    DataError,
    DegenerateMetricError,
    NotPositiveDefiniteError,
    NotSymmetricError,
    NumericalError,
    SingularMatrixError,
    SplitUnboundedError,
)
from .lca import FitConfig, MetricModel, e_step, fit, jensen_bound, loo_nll, m_step, transform

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "DegenerateMetricError",
    "FitConfig",
    "MetricModel",
    "NotPositiveDefiniteError",
    "NotSymmetricError",
    "NumericalError",
    "SingularMatrixError",
    "SplitUnboundedError",
    "e_step",
    "fit",
    "jensen_bound",
    "loo_nll",
    "m_step",
    "transform",
    "__version__",
]
