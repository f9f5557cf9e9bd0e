"""Second-moment dynamics of the OPO under continuous Markovian unravelings.

An unraveling is fixed by the complex noise correlation ``u = r + ih`` with
``dW dW* = dt`` and ``dW^2 = u dt``. Conditioned Gaussian states keep a
deterministic covariance; only the means diffuse.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from . import _backend
from .gaussian import (
    CovarianceMatrix,
    GaussianState,
    OpoModel,
    UnphysicalStateError,
    stationary_covariance,
)

DEFAULT_STEP = 1e-3
STATIONARY_TOL = 1e-12
DISK_TOL = 1e-12
INVERSE_RESIDUAL_TOL = 1e-8
PURE_DET_TOL = 1e-6


class IntegrationError(RuntimeError):
    """The covariance integrator produced a non-finite state."""


class ConvergenceError(RuntimeError):
    """No stationary covariance was reached within the time cap."""


class InverseProblemError(ValueError):
    """A covariance is not the stationary point of any continuous unraveling."""


class DegenerateInverseError(InverseProblemError):
    """The stationarity equations do not determine ``u`` (e.g. chi = 0)."""


@dataclass(frozen=True)
class UnravelingParam:
    r: float
    h: float = 0.0

    def __post_init__(self):
        r, h = float(self.r), float(self.h)
        if not (math.isfinite(r) and math.isfinite(h)):
            raise ValueError("unraveling parameter must be finite")
        if r * r + h * h > 1.0 + DISK_TOL:
            raise ValueError(f"|u| must not exceed 1, got u = {r}{h:+}i")
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "h", h)

    @classmethod
    def from_complex(cls, u: complex) -> "UnravelingParam":
        return cls(u.real, u.imag)

    @property
    def u(self) -> complex:
        return complex(self.r, self.h)

    def conjugate(self) -> "UnravelingParam":
        return UnravelingParam(self.r, -self.h)


ROBUST = UnravelingParam(-1.0, 0.0)


@dataclass(frozen=True)
class MomentDerivatives:
    """Right-hand sides of the conditioned moment equations.

    The means obey ``d x_bar = dx_bar dt + Re(noise_x dW)`` and likewise
    for ``y_bar``; the covariance derivatives carry no noise.
    """

    dx_bar: float
    dy_bar: float
    dgamma: float
    dalpha: float
    dbeta: float
    noise_x: complex
    noise_y: complex


@dataclass(frozen=True)
class EnsembleDescriptor:
    """Stationary ensemble: pure members sharing ``member_cov``, means drawn
    from a zero-mean Gaussian with covariance ``weight_cov``."""

    member_cov: CovarianceMatrix
    weight_cov: np.ndarray
    model: OpoModel
    unraveling: UnravelingParam


@dataclass(frozen=True)
class InverseSolution:
    unraveling: UnravelingParam | None
    realizable: bool
    residual: float
    r: float
    h: float


def moment_derivatives(state: GaussianState, u: UnravelingParam, model: OpoModel,
                       unravel: bool = True) -> MomentDerivatives:
    """Drift and noise coefficients of the moments; ``unravel=False`` drops
    every measurement-induced term, leaving the unconditioned flow."""
    cov = state.cov
    g, a, b = cov.gamma, cov.alpha, cov.beta
    dg, da, db = _backend.kernels.covariance_rhs(g, a, b, u.r, u.h, model.chi, unravel)
    if unravel:
        noise_x = complex(g - 1.0, b)
        noise_y = complex(b, a - 1.0)
    else:
        noise_x = noise_y = 0j
    return MomentDerivatives(
        dx_bar=-(1.0 + model.chi) * state.mean.x_bar / 2.0,
        dy_bar=-(1.0 - model.chi) * state.mean.y_bar / 2.0,
        dgamma=dg,
        dalpha=da,
        dbeta=db,
        noise_x=noise_x,
        noise_y=noise_y,
    )


def integrate_covariance(m0: CovarianceMatrix, u: UnravelingParam, model: OpoModel, t: float,
                         dt: float = DEFAULT_STEP, unravel: bool = True) -> CovarianceMatrix:
    if t < 0:
        raise ValueError("t must be non-negative")
    g, a, b, ok = _backend.kernels.integrate_covariance(
        m0.gamma, m0.alpha, m0.beta, u.r, u.h, model.chi, float(t), dt, unravel)
    if not ok:
        raise IntegrationError(f"covariance flow diverged (dt={dt}); reduce the step size")
    return CovarianceMatrix(g, a, b)


def time_cap(model: OpoModel) -> float:
    return 1e4 / (1.0 - abs(model.chi))


@functools.lru_cache(maxsize=4096)
def _stationary(r, h, chi, g0, a0, b0, dt, tol):
    g, a, b, t, converged = _backend.kernels.stationary_covariance(
        g0, a0, b0, r, h, chi, dt, tol, 1e4 / (1.0 - abs(chi)))
    if not converged:
        if not all(map(math.isfinite, (g, a, b))):
            raise IntegrationError(f"covariance flow diverged for u={r}{h:+}i, chi={chi}")
        raise ConvergenceError(f"no stationary covariance for u={r}{h:+}i, chi={chi} by t={t:g}")
    return g, a, b


def stationary_covariance_for_unraveling(u: UnravelingParam, model: OpoModel,
                                         m_init: CovarianceMatrix | None = None,
                                         dt: float = DEFAULT_STEP,
                                         tol: float = STATIONARY_TOL) -> CovarianceMatrix:
    """Attracting fixed point of the conditioned covariance flow.

    Starts from the unconditioned steady state unless ``m_init`` is given.
    """
    m = m_init if m_init is not None else stationary_covariance(model)
    g, a, b = _stationary(u.r, u.h, model.chi, m.gamma, m.alpha, m.beta, dt, tol)
    cov = CovarianceMatrix(g, a, b)
    if abs(cov.det - 1.0) > PURE_DET_TOL:
        raise ConvergenceError(f"stationary covariance is not pure: det = {cov.det!r}")
    return cov


def _inverse_system(m: CovarianceMatrix, model: OpoModel):
    g, a, b = m.gamma, m.alpha, m.beta
    chi = model.chi
    gm, am = g - 1.0, a - 1.0
    coeffs = np.array([
        [0.5 * (b * b - gm * gm), gm * b],
        [0.5 * (am * am - b * b), am * b],
        [0.5 * b * (a - g), 0.5 * (b * b + gm * am)],
    ])
    rhs = np.array([
        (1.0 + chi) * g - 1.0 + 0.5 * (gm * gm + b * b),
        (1.0 - chi) * a - 1.0 + 0.5 * (am * am + b * b),
        b + 0.5 * b * (gm + am),
    ])
    return coeffs, rhs


def unraveling_for_covariance(m: CovarianceMatrix, model: OpoModel,
                              det_tol: float = PURE_DET_TOL) -> InverseSolution:
    """Solve the stationarity equations, which are linear in (r, h).

    Raises :class:`DegenerateInverseError` when the system does not fix
    (r, h) and :class:`InverseProblemError` when it is inconsistent.
    """
    if abs(m.det - 1.0) > det_tol:
        raise UnphysicalStateError(f"expected a pure covariance, det = {m.det!r}")
    coeffs, rhs = _inverse_system(m, model)
    scale = 1.0 + float(np.linalg.norm(m.as_matrix()))
    sv = np.linalg.svd(coeffs, compute_uv=False)
    if sv[-1] <= 1e-10 * scale:
        raise DegenerateInverseError("stationarity equations are underdetermined for this covariance")
    sol, *_ = np.linalg.lstsq(coeffs, rhs, rcond=None)
    residual = float(np.linalg.norm(coeffs @ sol - rhs))
    if residual > INVERSE_RESIDUAL_TOL * scale:
        raise InverseProblemError(f"covariance is not stationary for any u (residual {residual:.3g})")
    r, h = float(sol[0]), float(sol[1])
    realizable = r * r + h * h <= 1.0 + 1e-9
    unraveling = UnravelingParam(r, h) if r * r + h * h <= 1.0 + DISK_TOL else None
    return InverseSolution(unraveling=unraveling, realizable=realizable, residual=residual, r=r, h=h)


def realizable_region_boundary(model: OpoModel, n: int = 64) -> np.ndarray:
    """(beta, gamma) of the stationary covariance as u runs round the unit circle.

    Vertex ``k`` corresponds to ``u = exp(i(pi + 2 pi k / n))``, so vertex 0
    is the robust point u = -1.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    if model.chi == 0.0:
        return np.array([[0.0, 1.0]])
    out = np.empty((n, 2))
    for k in range(n):
        theta = math.pi + 2.0 * math.pi * k / n
        u = UnravelingParam(math.cos(theta), math.sin(theta))
        if k == 0:
            u = ROBUST
        cov = stationary_covariance_for_unraveling(u, model)
        out[k] = (cov.beta, cov.gamma)
    return out


def unconstrained_beta_squared(gamma, model: OpoModel):
    """beta^2 on det(M_inf - M) = 0 with alpha eliminated through det(M) = 1."""
    chi = model.chi
    a_inf = 1.0 / (1.0 - chi)
    gamma = np.asarray(gamma, dtype=float)
    return a_inf * gamma - 1.0 - (1.0 + chi) * (a_inf * gamma * gamma - gamma)


def unconstrained_region_boundary(model: OpoModel, n: int = 64) -> np.ndarray:
    """Closed (beta, gamma) polyline bounding det(M)=1, det(M_inf - M) >= 0.

    Samples ``n`` uniformly spaced gammas between the two beta = 0 roots,
    1 - chi and 1/(1 + chi); upper branch ascending, lower branch back.
    """
    if n < 8:
        raise ValueError("n must be at least 8")
    chi = model.chi
    if chi == 0.0:
        return np.array([[0.0, 1.0]])
    lo, hi = sorted((1.0 - chi, 1.0 / (1.0 + chi)))
    gammas = np.linspace(lo, hi, n)
    b2 = unconstrained_beta_squared(gammas, model)
    if np.any(b2 < -1e-9):
        raise ArithmeticError("no real beta on the unconstrained boundary")
    beta = np.sqrt(np.clip(b2, 0.0, None))
    beta[0] = beta[-1] = 0.0
    upper = np.column_stack([beta, gammas])
    lower = np.column_stack([-beta[-2:0:-1], gammas[-2:0:-1]])
    return np.vstack([upper, lower])


def ensemble_for_unraveling(u: UnravelingParam, model: OpoModel) -> EnsembleDescriptor:
    member = stationary_covariance_for_unraveling(u, model)
    weight = stationary_covariance(model).as_matrix() - member.as_matrix()
    return EnsembleDescriptor(member_cov=member, weight_cov=weight, model=model, unraveling=u)


def weight_covariance(e: EnsembleDescriptor, tol: float = 1e-9) -> np.ndarray:
    """M_inf - M_0, checked positive semidefinite."""
    w = stationary_covariance(e.model).as_matrix() - e.member_cov.as_matrix()
    if np.linalg.eigvalsh(w)[0] < -tol:
        raise UnphysicalStateError("weight covariance is not positive semidefinite")
    return w
