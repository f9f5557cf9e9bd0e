# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: covariance Riccati flow and single-trajectory SSE.

Signatures mirror :mod:`opo_unravel._pykernels` exactly.
"""
from libc.math cimport fabs, isfinite, sqrt, ceil

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline void _rhs(double g, double a, double b, double r, double h,
                      double chi, bint unravel, double* out) noexcept nogil:
    cdef double gm = g - 1.0
    cdef double am = a - 1.0
    out[0] = -(1.0 + chi) * g + 1.0
    out[1] = -(1.0 - chi) * a + 1.0
    out[2] = -b
    if unravel:
        out[0] += 0.5 * (-(1.0 + r) * gm * gm - (1.0 - r) * b * b + 2.0 * h * gm * b)
        out[1] += 0.5 * (-(1.0 - r) * am * am - (1.0 + r) * b * b + 2.0 * h * am * b)
        out[2] += 0.5 * (-(1.0 + r) * gm * b - (1.0 - r) * am * b
                         + h * (b * b + gm * am))


cdef inline void _rk4(double* m, double r, double h, double chi, bint unravel,
                      double dt, double* k1) noexcept nogil:
    # k1 must already hold rhs(m)
    cdef double k2[3]
    cdef double k3[3]
    cdef double k4[3]
    cdef double half = 0.5 * dt
    _rhs(m[0] + half * k1[0], m[1] + half * k1[1], m[2] + half * k1[2],
         r, h, chi, unravel, k2)
    _rhs(m[0] + half * k2[0], m[1] + half * k2[1], m[2] + half * k2[2],
         r, h, chi, unravel, k3)
    _rhs(m[0] + dt * k3[0], m[1] + dt * k3[1], m[2] + dt * k3[2],
         r, h, chi, unravel, k4)
    cdef int i
    for i in range(3):
        m[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def covariance_rhs(double g, double a, double b, double r, double h,
                   double chi, bint unravel=True):
    cdef double out[3]
    _rhs(g, a, b, r, h, chi, unravel, out)
    return out[0], out[1], out[2]


def integrate_covariance(double g, double a, double b, double r, double h,
                         double chi, double t, double dt, bint unravel=True):
    """Fixed-step RK4 over [0, t]; the step is shrunk so it divides t.

    Returns ``(gamma, alpha, beta, ok)``; ``ok`` is False on a non-finite state.
    """
    cdef double m[3]
    cdef double k1[3]
    cdef long n, i
    cdef bint ok = True
    m[0] = g
    m[1] = a
    m[2] = b
    if t <= 0.0:
        return g, a, b, True
    n = <long>ceil(t / dt - 1e-9)
    if n < 1:
        n = 1
    cdef double step = t / n
    with nogil:
        for i in range(n):
            _rhs(m[0], m[1], m[2], r, h, chi, unravel, k1)
            _rk4(m, r, h, chi, unravel, step, k1)
            if not (isfinite(m[0]) and isfinite(m[1]) and isfinite(m[2])):
                ok = False
                break
    return m[0], m[1], m[2], ok


def stationary_covariance(double g, double a, double b, double r, double h,
                          double chi, double dt, double tol, double t_cap):
    """Integrate until max|dM/dt| < tol or t exceeds t_cap.

    Returns ``(gamma, alpha, beta, t_elapsed, converged)``.
    """
    cdef double m[3]
    cdef double k1[3]
    cdef double t = 0.0
    cdef bint converged = False
    m[0] = g
    m[1] = a
    m[2] = b
    with nogil:
        while t <= t_cap:
            _rhs(m[0], m[1], m[2], r, h, chi, True, k1)
            if fabs(k1[0]) < tol and fabs(k1[1]) < tol and fabs(k1[2]) < tol:
                converged = True
                break
            _rk4(m, r, h, chi, True, dt, k1)
            t += dt
            if not (isfinite(m[0]) and isfinite(m[1]) and isfinite(m[2])):
                break
    return m[0], m[1], m[2], t, converged


def sse_trajectory(const double complex[::1] g_data, const int[::1] g_indices,
                   const int[::1] g_indptr, const double complex[::1] c_data,
                   const int[::1] c_indices, const int[::1] c_indptr,
                   double complex[::1] psi, const double complex[::1] dw,
                   double dt):
    """Euler-Maruyama SSE for one collapse operator, updating ``psi`` in place.

    ``g`` is the CSR form of -iH - c^dagger c / 2 and ``c`` the collapse
    operator. Returns -1 on success, otherwise the index of the step at
    which the pre-normalisation norm fell below 1e-6.
    """
    cdef Py_ssize_t n = psi.shape[0]
    cdef Py_ssize_t n_steps = dw.shape[0]
    cdef double complex[::1] cpsi = np.empty(n, dtype=np.complex128)
    cdef double complex[::1] gpsi = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t s, i, j
    cdef double complex mean_c, acc, w
    cdef double norm2, scale, mod2
    cdef long failed = -1
    with nogil:
        for s in range(n_steps):
            mean_c = 0.0
            for i in range(n):
                acc = 0.0
                for j in range(c_indptr[i], c_indptr[i + 1]):
                    acc = acc + c_data[j] * psi[c_indices[j]]
                cpsi[i] = acc
                mean_c = mean_c + psi[i].conjugate() * acc
                acc = 0.0
                for j in range(g_indptr[i], g_indptr[i + 1]):
                    acc = acc + g_data[j] * psi[g_indices[j]]
                gpsi[i] = acc
            w = dw[s]
            mod2 = mean_c.real * mean_c.real + mean_c.imag * mean_c.imag
            norm2 = 0.0
            for i in range(n):
                psi[i] = (psi[i]
                          + (gpsi[i] + mean_c.conjugate() * cpsi[i]
                             - 0.5 * mod2 * psi[i]) * dt
                          + (cpsi[i] - mean_c * psi[i]) * w)
                norm2 += psi[i].real * psi[i].real + psi[i].imag * psi[i].imag
            if not (norm2 >= 1e-12):
                failed = s
                break
            scale = 1.0 / sqrt(norm2)
            for i in range(n):
                psi[i] = psi[i] * scale
    return failed
