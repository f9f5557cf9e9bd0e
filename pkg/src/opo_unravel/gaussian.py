"""Single-mode Gaussian state arithmetic for the degenerate OPO below threshold.

Quadratures are ``x = a + a^dagger`` and ``y = i(a^dagger - a)``, so the
vacuum has unit variance in both and a Gaussian state is pure exactly when
``det(M) = 1``. Time is measured in cavity lifetimes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DET_TOL = 1e-9

# Coefficient of the mean-displacement quadratic form in the overlap exponent,
# frozen after comparison with Fock-basis overlaps (tests/test_gaussian.py).
OVERLAP_EXPONENT = 0.5


class UnphysicalStateError(ValueError):
    """A covariance violates the uncertainty bound det(M) >= 1."""


@dataclass(frozen=True)
class OpoModel:
    """Degenerate OPO with threshold parameter ``chi`` (|chi| < 1)."""

    chi: float

    def __post_init__(self):
        chi = float(self.chi)
        if not math.isfinite(chi) or abs(chi) >= 1.0:
            raise ValueError(f"chi must satisfy |chi| < 1, got {self.chi!r}")
        object.__setattr__(self, "chi", chi)


@dataclass(frozen=True)
class MeanVector:
    x_bar: float = 0.0
    y_bar: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.x_bar) and math.isfinite(self.y_bar)):
            raise ValueError("mean vector must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.x_bar, self.y_bar])


@dataclass(frozen=True)
class CovarianceMatrix:
    """Symmetrised second moments ``[[gamma, beta], [beta, alpha]]``.

    ``gamma = <x^2>``, ``alpha = <y^2>`` and ``beta = <xy + yx>/2`` (central).
    Construction does not enforce the uncertainty bound; use
    :func:`is_valid_quantum_covariance` for that.
    """

    gamma: float
    alpha: float
    beta: float = 0.0

    @property
    def det(self) -> float:
        return self.gamma * self.alpha - self.beta * self.beta

    def as_matrix(self) -> np.ndarray:
        return np.array([[self.gamma, self.beta], [self.beta, self.alpha]])

    @classmethod
    def from_matrix(cls, m) -> "CovarianceMatrix":
        m = np.asarray(m, dtype=float)
        if m.shape != (2, 2):
            raise ValueError(f"expected a 2x2 matrix, got shape {m.shape}")
        if abs(m[0, 1] - m[1, 0]) > 1e-12 * (1.0 + np.abs(m).max()):
            raise ValueError("covariance matrix must be symmetric")
        return cls(gamma=float(m[0, 0]), alpha=float(m[1, 1]), beta=float(0.5 * (m[0, 1] + m[1, 0])))


VACUUM = CovarianceMatrix(1.0, 1.0, 0.0)


@dataclass(frozen=True)
class GaussianState:
    cov: CovarianceMatrix
    mean: MeanVector = field(default_factory=MeanVector)

    def __post_init__(self):
        if not is_valid_quantum_covariance(self.cov):
            raise UnphysicalStateError(f"invalid quantum covariance {self.cov}")


def stationary_covariance(model: OpoModel) -> CovarianceMatrix:
    """Covariance of the unique steady state: diag(1/(1+chi), 1/(1-chi))."""
    return CovarianceMatrix(gamma=1.0 / (1.0 + model.chi), alpha=1.0 / (1.0 - model.chi), beta=0.0)


def is_valid_quantum_covariance(cov: CovarianceMatrix, tol: float = DET_TOL) -> bool:
    return cov.gamma > 0 and cov.alpha > 0 and cov.det >= 1.0 - tol


def purity(cov: CovarianceMatrix, tol: float = DET_TOL) -> float:
    """Tr[rho^2] = det(M)^(-1/2), clipped to 1 for det within ``tol`` below 1."""
    if not is_valid_quantum_covariance(cov, tol):
        raise UnphysicalStateError(f"det(M) = {cov.det!r} is below the uncertainty bound")
    return min(1.0, cov.det ** -0.5)


def largest_eigenvalue(model: OpoModel) -> float:
    """Largest eigenvalue of the steady state, 2 / (1 + (1 - chi^2)^(-1/2))."""
    s = math.sqrt(1.0 - model.chi * model.chi)
    return 2.0 * s / (1.0 + s)


def gaussian_overlap(s1: GaussianState, s2: GaussianState) -> float:
    """Tr[rho1 rho2] for two Gaussian states.

    Equals ``2 det(M1+M2)^(-1/2) exp(-k d^T (M1+M2)^(-1) d)`` with ``d`` the
    difference of the means and ``k = OVERLAP_EXPONENT``.
    """
    for s in (s1, s2):
        if not is_valid_quantum_covariance(s.cov):
            raise UnphysicalStateError(f"invalid quantum covariance {s.cov}")
    total = s1.cov.as_matrix() + s2.cov.as_matrix()
    d = s1.mean.as_array() - s2.mean.as_array()
    q = float(d @ np.linalg.solve(total, d))
    det = float(np.linalg.det(total))
    return min(1.0, 2.0 / math.sqrt(det) * math.exp(-OVERLAP_EXPONENT * q))
