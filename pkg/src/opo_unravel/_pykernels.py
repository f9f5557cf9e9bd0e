"""Pure-Python versions of the compiled inner loops.

Same signatures and return conventions as the ``_ckernels`` extension; used
when the extension is unavailable or ``OPO_UNRAVEL_PURE_PYTHON`` is set.
"""
from __future__ import annotations

import math

import numpy as np


def covariance_rhs(g, a, b, r, h, chi, unravel=True):
    gm = g - 1.0
    am = a - 1.0
    dg = -(1.0 + chi) * g + 1.0
    da = -(1.0 - chi) * a + 1.0
    db = -b
    if unravel:
        dg += 0.5 * (-(1.0 + r) * gm * gm - (1.0 - r) * b * b + 2.0 * h * gm * b)
        da += 0.5 * (-(1.0 - r) * am * am - (1.0 + r) * b * b + 2.0 * h * am * b)
        db += 0.5 * (-(1.0 + r) * gm * b - (1.0 - r) * am * b + h * (b * b + gm * am))
    return dg, da, db


def _rk4(g, a, b, r, h, chi, unravel, dt, k1):
    half = 0.5 * dt
    k2 = covariance_rhs(g + half * k1[0], a + half * k1[1], b + half * k1[2], r, h, chi, unravel)
    k3 = covariance_rhs(g + half * k2[0], a + half * k2[1], b + half * k2[2], r, h, chi, unravel)
    k4 = covariance_rhs(g + dt * k3[0], a + dt * k3[1], b + dt * k3[2], r, h, chi, unravel)
    sixth = dt / 6.0
    return (
        g + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        a + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        b + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    )


def integrate_covariance(g, a, b, r, h, chi, t, dt, unravel=True):
    if t <= 0.0:
        return g, a, b, True
    n = max(1, math.ceil(t / dt - 1e-9))
    step = t / n
    for _ in range(n):
        k1 = covariance_rhs(g, a, b, r, h, chi, unravel)
        g, a, b = _rk4(g, a, b, r, h, chi, unravel, step, k1)
        if not (math.isfinite(g) and math.isfinite(a) and math.isfinite(b)):
            return g, a, b, False
    return g, a, b, True


def stationary_covariance(g, a, b, r, h, chi, dt, tol, t_cap):
    t = 0.0
    while t <= t_cap:
        k1 = covariance_rhs(g, a, b, r, h, chi, True)
        if abs(k1[0]) < tol and abs(k1[1]) < tol and abs(k1[2]) < tol:
            return g, a, b, t, True
        g, a, b = _rk4(g, a, b, r, h, chi, True, dt, k1)
        t += dt
        if not (math.isfinite(g) and math.isfinite(a) and math.isfinite(b)):
            break
    return g, a, b, t, False


def sse_trajectory(g_data, g_indices, g_indptr, c_data, c_indices, c_indptr, psi, dw, dt):
    n = psi.shape[0]
    rows_g = np.repeat(np.arange(n), np.diff(g_indptr))
    rows_c = np.repeat(np.arange(n), np.diff(c_indptr))
    for s in range(dw.shape[0]):
        cpsi = np.zeros(n, dtype=complex)
        np.add.at(cpsi, rows_c, c_data * psi[c_indices])
        gpsi = np.zeros(n, dtype=complex)
        np.add.at(gpsi, rows_g, g_data * psi[g_indices])
        mean_c = np.vdot(psi, cpsi)
        mod2 = mean_c.real ** 2 + mean_c.imag ** 2
        psi += (gpsi + np.conj(mean_c) * cpsi - 0.5 * mod2 * psi) * dt + (cpsi - mean_c * psi) * dw[s]
        norm2 = np.vdot(psi, psi).real
        if not norm2 >= 1e-12:
            return s
        psi /= math.sqrt(norm2)
    return -1
