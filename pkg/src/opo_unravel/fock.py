"""Brute-force checks in a truncated Fock basis.

Independent of the Gaussian formulas: a generic Lindblad integrator,
steady-state search, exact survival probabilities and Euler-Maruyama
stochastic Schrodinger trajectories driven by correlated complex Wiener
noise.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import _backend
from .dynamics import IntegrationError
from .gaussian import CovarianceMatrix, MeanVector, OpoModel


class TruncationWarning(UserWarning):
    """Population in the highest Fock level exceeds the requested tolerance."""


class TruncationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FockSpace:
    dim: int

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise ValueError(f"Fock dimension must be an integer >= 2, got {self.dim!r}")

    def annihilation(self) -> np.ndarray:
        return np.diag(np.sqrt(np.arange(1, self.dim, dtype=float)), k=1).astype(complex)

    def vacuum(self) -> np.ndarray:
        psi = np.zeros(self.dim, dtype=complex)
        psi[0] = 1.0
        return psi


def quadrature_operators(dim: int) -> dict[str, np.ndarray]:
    """x, y and their symmetrised second moments, written in normal-ordered
    form so the top Fock level does not corrupt them."""
    a = FockSpace(dim).annihilation()
    ad = a.conj().T
    a2, ad2, n = a @ a, ad @ ad, ad @ a
    one = np.eye(dim)
    return {
        "x": a + ad,
        "y": 1j * (ad - a),
        "xx": a2 + ad2 + 2 * n + one,
        "yy": -a2 - ad2 + 2 * n + one,
        "xy": 1j * (ad2 - a2),
    }


@dataclass
class LindbladModel:
    """Generator -i[H, .] + sum_k D[c_k] on N x N matrices."""

    hamiltonian: np.ndarray
    collapse_ops: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.hamiltonian = np.asarray(self.hamiltonian, dtype=complex)
        self.collapse_ops = [np.asarray(c, dtype=complex) for c in self.collapse_ops]
        n = self.hamiltonian.shape[0]
        if self.hamiltonian.shape != (n, n):
            raise ValueError("Hamiltonian must be square")
        if np.abs(self.hamiltonian - self.hamiltonian.conj().T).max(initial=0.0) > 1e-12:
            raise ValueError("Hamiltonian is not Hermitian")
        for c in self.collapse_ops:
            if c.shape != (n, n):
                raise ValueError("collapse operator shape does not match the Hamiltonian")

    @property
    def dim(self) -> int:
        return self.hamiltonian.shape[0]

    @cached_property
    def effective_generator(self) -> np.ndarray:
        """-iH - sum_k c_k^dagger c_k / 2."""
        g = -1j * self.hamiltonian
        for c in self.collapse_ops:
            g = g - 0.5 * c.conj().T @ c
        return g

    @cached_property
    def default_step(self) -> float:
        bound = 2.0 * np.linalg.norm(self.hamiltonian, 2)
        bound += 2.0 * sum(np.linalg.norm(c, 2) ** 2 for c in self.collapse_ops)
        return min(0.05, 1.0 / max(bound, 1e-12))


def opo_model(model: OpoModel, space: FockSpace) -> LindbladModel:
    """Truncated OPO generator with H = i(chi/4)(a^2 - a^dagger^2) and c = a.

    This sign squeezes x, matching the moment equations and the steady-state
    covariance diag(1/(1+chi), 1/(1-chi)).
    """
    a = space.annihilation()
    ad = a.conj().T
    h = 1j * (model.chi / 4.0) * (a @ a - ad @ ad)
    return LindbladModel(hamiltonian=0.5 * (h + h.conj().T), collapse_ops=[a])


def lindblad_rhs(rho: np.ndarray, model: LindbladModel) -> np.ndarray:
    g = model.effective_generator
    out = g @ rho + rho @ g.conj().T
    for c in model.collapse_ops:
        out += c @ rho @ c.conj().T
    return out


def _rk4(rho, model, dt):
    k1 = lindblad_rhs(rho, model)
    k2 = lindblad_rhs(rho + 0.5 * dt * k1, model)
    k3 = lindblad_rhs(rho + 0.5 * dt * k2, model)
    k4 = lindblad_rhs(rho + dt * k3, model)
    return rho + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def evolve_density(rho: np.ndarray, model: LindbladModel, t: float, dt: float | None = None) -> np.ndarray:
    """Fixed-step RK4 propagation of rho for time t."""
    if t < 0:
        raise ValueError("t must be non-negative")
    dt = dt or model.default_step
    n = max(1, math.ceil(t / dt - 1e-9)) if t > 0 else 0
    rho = np.array(rho, dtype=complex)
    for _ in range(n):
        rho = _rk4(rho, model, t / n)
    return rho


def photon_tail(rho: np.ndarray) -> float:
    return float(np.real(rho[-1, -1]))


def steady_state(model: LindbladModel, tol: float = 1e-10, tail_tol: float = 1e-10,
                 dt: float | None = None, t_max: float = 1e4, rho0: np.ndarray | None = None) -> np.ndarray:
    """Integrate from ``rho0`` (vacuum by default) until ||L rho||_F < tol."""
    dt = dt or model.default_step
    if rho0 is None:
        rho = np.zeros((model.dim, model.dim), dtype=complex)
        rho[0, 0] = 1.0
    else:
        rho = np.array(rho0, dtype=complex)
    t = 0.0
    while np.linalg.norm(lindblad_rhs(rho, model)) >= tol:
        if t > t_max:
            raise RuntimeError(f"steady state not reached by t = {t_max:g}")
        for _ in range(10):
            rho = _rk4(rho, model, dt)
        t += 10 * dt
    rho = 0.5 * (rho + rho.conj().T)
    tail = photon_tail(rho)
    if tail > tail_tol:
        warnings.warn(f"top Fock level holds population {tail:.3g}; increase the dimension",
                      TruncationWarning, stacklevel=2)
    return rho


def moments(state: np.ndarray) -> tuple[MeanVector, CovarianceMatrix]:
    """Quadrature means and central covariance of a state vector or density matrix."""
    ops = quadrature_operators(state.shape[-1])
    if state.ndim == 1:
        ev = {k: float(np.real(np.vdot(state, op @ state))) for k, op in ops.items()}
    else:
        ev = {k: float(np.real(np.trace(op @ state))) for k, op in ops.items()}
    xb, yb = ev["x"], ev["y"]
    cov = CovarianceMatrix(gamma=ev["xx"] - xb * xb, alpha=ev["yy"] - yb * yb, beta=ev["xy"] - xb * yb)
    return MeanVector(xb, yb), cov


def batch_moments(psi: np.ndarray) -> np.ndarray:
    """Rows (x_bar, y_bar, gamma, alpha, beta) for a batch of state vectors."""
    ops = quadrature_operators(psi.shape[-1])
    ev = {k: np.real(np.einsum("ni,ij,nj->n", psi.conj(), op, psi)) for k, op in ops.items()}
    xb, yb = ev["x"], ev["y"]
    return np.column_stack([xb, yb, ev["xx"] - xb ** 2, ev["yy"] - yb ** 2, ev["xy"] - xb * yb])


def gaussian_pure_state(cov: CovarianceMatrix, space: FockSpace, mean: MeanVector | None = None) -> np.ndarray:
    """Pure Gaussian state with the given moments, as a Fock-basis vector.

    It is the null vector of (beta + i) x - gamma y minus its mean value,
    which is the quadrature combination annihilating that state. Requires
    det(cov) = 1.
    """
    if abs(cov.det - 1.0) > 1e-8:
        raise ValueError("a pure Gaussian state needs det(M) = 1")
    mean = mean or MeanVector()
    ops = quadrature_operators(space.dim)
    shift = (cov.beta + 1j) * mean.x_bar - cov.gamma * mean.y_bar
    b = (cov.beta + 1j) * ops["x"] - cov.gamma * ops["y"] - shift * np.eye(space.dim)
    _, vecs = np.linalg.eigh(b.conj().T @ b)
    psi = vecs[:, 0]
    k = int(np.argmax(np.abs(psi)))
    return psi * (abs(psi[k]) / psi[k])


def survival_fock(psi: np.ndarray, model: LindbladModel, t: float, dt: float | None = None) -> float:
    """<psi| exp(L t)(|psi><psi|) |psi>."""
    rho = evolve_density(np.outer(psi, psi.conj()), model, t, dt)
    if photon_tail(rho) > 1e-10:
        warnings.warn("evolved state reaches the top Fock level", TruncationWarning, stacklevel=2)
    return float(np.real(np.vdot(psi, rho @ psi)))


@dataclass(frozen=True)
class NoiseCorrelation:
    """Symmetric matrix u_jk with dW_j dW_k = u_jk dt and dW_j dW_k* = delta_jk dt."""

    u_matrix: np.ndarray

    def __post_init__(self):
        u = np.atleast_2d(np.asarray(self.u_matrix, dtype=complex))
        if u.shape[0] != u.shape[1]:
            raise ValueError("correlation matrix must be square")
        if np.abs(u - u.T).max() > 1e-12:
            raise ValueError("correlation matrix must be symmetric")
        if np.abs(u).max() > 1.0 + 1e-12:
            raise ValueError("correlations must satisfy |u_jk| <= 1")
        if np.linalg.eigvalsh(self.real_covariance_of(u))[0] < -1e-12:
            raise ValueError("correlation matrix does not define a valid joint covariance")
        object.__setattr__(self, "u_matrix", u)

    @staticmethod
    def real_covariance_of(u: np.ndarray) -> np.ndarray:
        k = u.shape[0]
        eye = np.eye(k)
        return 0.5 * np.block([[eye + u.real, u.imag], [u.imag, eye - u.real]])

    @classmethod
    def single(cls, u: complex) -> "NoiseCorrelation":
        return cls(np.array([[u]]))

    @property
    def n_channels(self) -> int:
        return self.u_matrix.shape[0]

    @cached_property
    def real_covariance(self) -> np.ndarray:
        """Covariance of (Re dW, Im dW) per unit time."""
        return self.real_covariance_of(self.u_matrix)

    @cached_property
    def factor(self) -> np.ndarray:
        w, v = np.linalg.eigh(self.real_covariance)
        return v * np.sqrt(np.clip(w, 0.0, None))


def sample_noise(corr: NoiseCorrelation, dt: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """Complex Wiener increments, shape (K,) or (size, K)."""
    k = corr.n_channels
    z = rng.standard_normal((1 if size is None else size, 2 * k))
    xy = (z @ corr.factor.T) * math.sqrt(dt)
    dw = xy[:, :k] + 1j * xy[:, k:]
    return dw[0] if size is None else dw


def projector_increment(p: np.ndarray, model: LindbladModel, dw: np.ndarray, dt: float) -> np.ndarray:
    """L P dt + sum_k H[dW_k c_k] P, with H[r]P = rP + P r^dagger - Tr[rP + P r^dagger] P."""
    out = lindblad_rhs(p, model) * dt
    for w, c in zip(np.atleast_1d(dw), model.collapse_ops):
        rp = w * c @ p
        term = rp + rp.conj().T
        out = out + term - np.trace(term) * p
    return out


def sse_step(psi: np.ndarray, model: LindbladModel, corr: NoiseCorrelation | None, dt: float,
             rng: np.random.Generator | None = None, dw: np.ndarray | None = None) -> np.ndarray:
    """One Euler-Maruyama step of the state-vector SSE, then renormalisation.

    ``psi`` may be a single vector (N,) or a batch (B, N); ``dw`` then has
    shape (K,) or (B, K). Noise is drawn from ``rng`` when ``dw`` is None.
    """
    psi = np.asarray(psi, dtype=complex)
    k = len(model.collapse_ops)
    if dw is None:
        size = None if psi.ndim == 1 else psi.shape[0]
        dw = sample_noise(corr, dt, rng, size)
    dw = np.asarray(dw, dtype=complex).reshape(psi.shape[:-1] + (k,))
    drift = psi @ model.effective_generator.T
    new = psi + drift * dt
    for j, c in enumerate(model.collapse_ops):
        cpsi = psi @ c.T
        mean = np.sum(psi.conj() * cpsi, axis=-1, keepdims=True)
        new = new + (mean.conj() * cpsi - 0.5 * np.abs(mean) ** 2 * psi) * dt
        new = new + (cpsi - mean * psi) * dw[..., j:j + 1]
    norm = np.sqrt(np.sum(np.abs(new) ** 2, axis=-1, keepdims=True))
    if np.any(~(norm >= 1e-6)):
        raise IntegrationError("SSE state norm collapsed; reduce dt")
    return new / norm


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """Counter-based stream for trajectory ``index``; independent of scheduling."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(index,))))


NOISE_CHUNK = 4096


def _noise_chunks(corr, dt, n_steps, rng):
    done = 0
    while done < n_steps:
        m = min(NOISE_CHUNK, n_steps - done)
        yield sample_noise(corr, dt, rng, m)
        done += m


@dataclass
class EnsembleStatistics:
    """Final per-trajectory moments (columns x_bar, y_bar, gamma, alpha, beta)."""

    moments: np.ndarray
    mean_rho: np.ndarray
    max_tail: float
    t_relax: float
    dt: float

    def mean_vector_covariance(self) -> np.ndarray:
        return np.cov(self.moments[:, :2], rowvar=False, ddof=1)


def _csr(m):
    rows, cols = np.nonzero(m)
    indptr = np.zeros(m.shape[0] + 1, dtype=np.int32)
    np.add.at(indptr, rows + 1, 1)
    return (np.ascontiguousarray(m[rows, cols], dtype=complex),
            cols.astype(np.int32), np.cumsum(indptr).astype(np.int32))


def simulate_ensemble(model: LindbladModel, corr: NoiseCorrelation, n_traj: int, t_relax: float,
                      dt: float, seed: int, workers: int = 1, backend: str | None = None) -> EnsembleStatistics:
    """Run ``n_traj`` SSE trajectories from the vacuum for ``t_relax``.

    The compiled kernel handles one collapse operator per trajectory; other
    cases use a batched numpy loop. Both draw identical noise streams.
    """
    if n_traj < 1 or t_relax <= 0 or dt <= 0:
        raise ValueError("n_traj, t_relax and dt must be positive")
    if corr.n_channels != len(model.collapse_ops):
        raise ValueError("noise correlation size does not match the number of collapse operators")
    n_steps = int(round(t_relax / dt))
    kernels = _backend.load(backend) if backend else _backend.kernels
    compiled = kernels is not _backend.load("python")
    vac = FockSpace(model.dim).vacuum()

    if compiled and len(model.collapse_ops) == 1:
        g_csr = _csr(model.effective_generator)
        c_csr = _csr(model.collapse_ops[0])

        def run(i):
            rng = trajectory_rng(seed, i)
            dw = np.concatenate([c[:, 0] for c in _noise_chunks(corr, dt, n_steps, rng)])
            psi = vac.copy()
            failed = kernels.sse_trajectory(*g_csr, *c_csr, psi, np.ascontiguousarray(dw), dt)
            if failed >= 0:
                raise IntegrationError(f"trajectory {i}: norm collapsed at step {failed}")
            return psi

        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(workers) as pool:
                finals = np.array(list(pool.map(run, range(n_traj))))
        else:
            finals = np.array([run(i) for i in range(n_traj)])
    else:
        psi = np.tile(vac, (n_traj, 1))
        streams = [_noise_chunks(corr, dt, n_steps, trajectory_rng(seed, i)) for i in range(n_traj)]
        done = 0
        while done < n_steps:
            block = np.stack([next(s) for s in streams])
            for s in range(block.shape[1]):
                psi = sse_step(psi, model, corr, dt, dw=block[:, s, :])
            done += block.shape[1]
        finals = psi

    rows = batch_moments(finals)
    mean_rho = finals.T @ finals.conj() / n_traj
    max_tail = float(np.max(np.abs(finals[:, -1]) ** 2))
    return EnsembleStatistics(moments=rows, mean_rho=mean_rho, max_tail=max_tail, t_relax=n_steps * dt, dt=dt)
