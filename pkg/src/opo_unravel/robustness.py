"""Ensemble-average survival probability, survival time and its optimisation.

The survival probability S(t) is the mean probability that a member of a
stationary ensemble is still found in its initial pure state a time t after
monitoring stops. The survival time is the first t with S(t) equal to the
largest eigenvalue of the steady state.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy.optimize import bisect

from .dynamics import (
    ROBUST,
    UnravelingParam,
    stationary_covariance_for_unraveling,
)
from .gaussian import (
    CovarianceMatrix,
    OpoModel,
    UnphysicalStateError,
    largest_eigenvalue,
    stationary_covariance,
)

log = logging.getLogger(__name__)

SCAN_STEP = 0.01
ROOT_TOL = 1e-10


class NoCrossingError(RuntimeError):
    """S(t) did not reach the largest eigenvalue before the scan cap."""


@dataclass(frozen=True)
class Propagator:
    t: float
    v_plus: float
    v_minus: float

    @classmethod
    def at(cls, model: OpoModel, t: float) -> "Propagator":
        return cls(t, math.exp(-(1.0 + model.chi) * t / 2.0), math.exp(-(1.0 - model.chi) * t / 2.0))

    def as_matrix(self) -> np.ndarray:
        return np.diag([self.v_plus, self.v_minus])


@dataclass(frozen=True)
class SurvivalCurve:
    chi: float
    unraveling: UnravelingParam
    samples: tuple[tuple[float, float], ...]


@dataclass(frozen=True)
class SurvivalTime:
    tau: float
    crossing_bracket: tuple[float, float]


@dataclass
class OptimizationResult:
    unraveling: UnravelingParam
    survival_time: SurvivalTime
    grid: list[tuple[float, float, float]] = field(default_factory=list)
    failures: list[tuple[float, float, str]] = field(default_factory=list)
    evaluations: int = 0


class Fig2Row(NamedTuple):
    chi: float
    tau_R: float
    alpha_inf: float
    alpha0_R: float
    Lambda: float
    S_inf: float


def evolved_moments(m0: CovarianceMatrix, model: OpoModel, t: float):
    """Unconditioned evolution: M_t = V M0 V^T + M_inf - V M_inf V^T."""
    if t < 0:
        raise ValueError("t must be non-negative")
    prop = Propagator.at(model, t)
    v = prop.as_matrix()
    m_inf = stationary_covariance(model).as_matrix()
    mt = v @ m0.as_matrix() @ v.T + m_inf - v @ m_inf @ v.T
    return prop, CovarianceMatrix.from_matrix(0.5 * (mt + mt.T))


def survival_probability_integral(m0: CovarianceMatrix, model: OpoModel, t: float) -> float:
    """Determinant form of the ensemble-averaged Tr[P exp(Lt) P]."""
    m_inf = stationary_covariance(model).as_matrix()
    m0m = m0.as_matrix()
    weight = m_inf - m0m
    if np.linalg.eigvalsh(weight)[0] < -1e-9:
        raise UnphysicalStateError("M_inf - M0 is not positive semidefinite")
    prop, mt = evolved_moments(m0, model, t)
    one_minus_v = np.eye(2) - prop.as_matrix()
    kernel = 0.5 * (one_minus_v @ weight @ one_minus_v.T + mt.as_matrix() + m0m)
    return float(np.linalg.det(kernel)) ** -0.5


def survival_probability(gamma0: float, beta0: float, model: OpoModel, t):
    """Scalar closed form of S(t) in terms of the member moments; vectorised in t."""
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    chi = model.chi
    t = np.asarray(t, dtype=float)
    vp = np.exp(-(1.0 + chi) * t / 2.0)
    vm = np.exp(-(1.0 - chi) * t / 2.0)
    cross = vm * (1.0 - vp) / ((1.0 + chi) * gamma0)
    bracket = (vp * vm + cross + vp * (1.0 - vm) * gamma0 / (1.0 - chi)
               + (1.0 - vm) * (1.0 - vp) / (1.0 - chi * chi)
               + beta0 * beta0 * (cross - ((vp - vm) / 2.0) ** 2))
    s = bracket ** -0.5
    return float(s) if s.ndim == 0 else s


def robust_survival(model: OpoModel, t):
    chi2 = model.chi * model.chi
    t = np.asarray(t, dtype=float)
    s = np.sqrt((1.0 - chi2) / (1.0 - chi2 * np.exp(-(1.0 - model.chi) * t / 2.0)))
    return float(s) if s.ndim == 0 else s


def robust_survival_time(model: OpoModel) -> float:
    """Closed-form survival time of the u = -1 ensemble.

    Written as 2/(1-chi) ln[4(1+s)/(3+s)], s = sqrt(1-chi^2), which is the
    same expression as 4chi^2/(2+chi^2-2s) inside the log without the
    cancellation at small chi. Returns 2 ln 2 at chi = 0.
    """
    chi = model.chi
    s = math.sqrt(1.0 - chi * chi)
    return 2.0 / (1.0 - chi) * math.log(4.0 * (1.0 + s) / (3.0 + s))


def scan_cap(model: OpoModel) -> float:
    c = 1.0 - abs(model.chi)
    return 10.0 * (2.0 / c) * math.log(4.0 / c)


def survival_curve(u: UnravelingParam, model: OpoModel, times) -> SurvivalCurve:
    m0 = stationary_covariance_for_unraveling(u, model)
    values = survival_probability(m0.gamma, m0.beta, model, np.asarray(times, dtype=float))
    samples = tuple((float(t), float(s)) for t, s in zip(np.atleast_1d(times), np.atleast_1d(values)))
    return SurvivalCurve(model.chi, u, samples)


def first_crossing(gamma0: float, beta0: float, model: OpoModel,
                   step: float = SCAN_STEP, tol: float = ROOT_TOL) -> SurvivalTime:
    """Earliest t with S(t) = Lambda: forward scan for a sign change, then bisection."""
    lam = largest_eigenvalue(model)
    cap = scan_cap(model)

    def excess(t):
        return survival_probability(gamma0, beta0, model, t) - lam

    start = 0
    chunk = 512
    while start * step <= cap:
        ts = (start + np.arange(chunk + 1)) * step
        below = np.flatnonzero(excess(ts) <= 0.0)
        if below.size:
            k = below[0]
            if k == 0:
                if start == 0:
                    raise NoCrossingError("S(0) does not exceed Lambda; the ensemble is degenerate")
                k = 1
            lo, hi = float(ts[k - 1]), float(ts[k])
            if excess(hi) == 0.0:
                return SurvivalTime(hi, (lo, hi))
            tau = bisect(excess, lo, hi, xtol=tol, maxiter=200)
            return SurvivalTime(float(tau), (lo, hi))
        start += chunk
    raise NoCrossingError(f"no crossing of Lambda before t = {cap:g}")


def survival_time(u: UnravelingParam, model: OpoModel, step: float = SCAN_STEP,
                  tol: float = ROOT_TOL) -> SurvivalTime:
    m0 = stationary_covariance_for_unraveling(u, model)
    return first_crossing(m0.gamma, m0.beta, model, step=step, tol=tol)


def disk_grid(n_radii: int = 21, n_angles: int = 32) -> list[UnravelingParam]:
    """Polar grid over the closed unit disk; the centre appears once."""
    points = [UnravelingParam(0.0, 0.0)]
    for rho in np.linspace(0.0, 1.0, n_radii)[1:]:
        for k in range(n_angles):
            theta = 2.0 * math.pi * k / n_angles
            points.append(_polar(rho, theta))
    return points


def _polar(rho: float, theta: float) -> UnravelingParam:
    r, h = rho * math.cos(theta), rho * math.sin(theta)
    # snap exact axis points so u = -1 is representable on the grid
    r = 0.0 if abs(r) < 1e-15 else r
    h = 0.0 if abs(h) < 1e-15 else h
    norm = math.hypot(r, h)
    if norm > 1.0:
        r, h = r / norm, h / norm
    return UnravelingParam(r, h)


def optimal_unraveling(model: OpoModel, n_radii: int = 21, n_angles: int = 32,
                       move_tol: float = 1e-3, workers: int = 1) -> OptimizationResult:
    """Maximise the survival time over the unit disk.

    Coarse polar grid, then coordinate descent in (radius, angle) with step
    halving until a move would shift u by less than ``move_tol``.
    """
    if not 0.0 < model.chi < 1.0:
        raise ValueError("optimisation requires 0 < chi < 1")
    cache: dict[tuple[float, float], float | None] = {}
    failures: list[tuple[float, float, str]] = []

    def tau_of(u: UnravelingParam):
        key = (u.r, u.h)
        if key not in cache:
            try:
                cache[key] = survival_time(u, model).tau
            except (RuntimeError, ValueError) as exc:
                log.warning("survival time failed at u=%r: %s", key, exc)
                failures.append((u.r, u.h, str(exc)))
                cache[key] = None
        return cache[key]

    grid_points = disk_grid(n_radii, n_angles)
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(workers) as pool:
            taus = list(pool.map(tau_of, grid_points))
    else:
        taus = [tau_of(u) for u in grid_points]
    grid = [(u.r, u.h, t) for u, t in zip(grid_points, taus) if t is not None]
    if not grid:
        raise RuntimeError("every grid point failed")
    # argmax with ties broken towards the lexicographically smallest (r, h)
    best_r, best_h, best_tau = min(grid, key=lambda row: (-row[2], row[0], row[1]))

    rho, theta = math.hypot(best_r, best_h), math.atan2(best_h, best_r)
    d_rho = 1.0 / max(n_radii - 1, 1)
    d_theta = 2.0 * math.pi / n_angles
    while max(d_rho, rho * d_theta) >= move_tol:
        candidates = []
        for nr, nt in ((rho + d_rho, theta), (rho - d_rho, theta),
                       (rho, theta + d_theta), (rho, theta - d_theta)):
            nr = min(max(nr, 0.0), 1.0)
            u = _polar(nr, nt)
            t = tau_of(u)
            if t is not None:
                candidates.append((t, nr, nt))
        better = [c for c in candidates if c[0] > best_tau]
        if better:
            best_tau, rho, theta = max(better, key=lambda c: c[0])
        else:
            d_rho *= 0.5
            d_theta *= 0.5
    best_u = _polar(rho, theta)
    return OptimizationResult(
        unraveling=best_u,
        survival_time=survival_time(best_u, model),
        grid=grid,
        failures=failures,
        evaluations=len(cache),
    )


def figure2_table(chi_grid) -> list[Fig2Row]:
    rows = []
    for chi in chi_grid:
        model = OpoModel(chi)
        rows.append(Fig2Row(
            chi=model.chi,
            tau_R=robust_survival_time(model),
            alpha_inf=1.0 / (1.0 - model.chi),
            alpha0_R=1.0 + model.chi,
            Lambda=largest_eigenvalue(model),
            S_inf=math.sqrt(1.0 - model.chi ** 2),
        ))
    return rows

