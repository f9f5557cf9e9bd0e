"""Maximally robust continuous unravelings of the degenerate OPO below threshold."""

__version__ = "0.1.0"

from ._backend import COMPILED  # noqa: E402
from .gaussian import (  # noqa: E402
    CovarianceMatrix,
    GaussianState,
    MeanVector,
    OpoModel,
    gaussian_overlap,
    largest_eigenvalue,
    purity,
    stationary_covariance,
)
from .dynamics import ROBUST, UnravelingParam, stationary_covariance_for_unraveling  # noqa: E402
from .robustness import (  # noqa: E402
    optimal_unraveling,
    robust_survival,
    robust_survival_time,
    survival_probability,
    survival_time,
)
