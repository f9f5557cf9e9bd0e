"""Time the compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from opo_unravel import _backend
from opo_unravel.fock import FockSpace, NoiseCorrelation, _csr, opo_model, sample_noise
from opo_unravel.gaussian import OpoModel


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def cases():
    lm = opo_model(OpoModel(0.5), FockSpace(30))
    g_csr, c_csr = _csr(lm.effective_generator), _csr(lm.collapse_ops[0])
    dw = np.ascontiguousarray(sample_noise(NoiseCorrelation.single(-1.0), 1e-4, np.random.default_rng(0), 20000)[:, 0])

    def sse(k):
        psi = FockSpace(30).vacuum()
        k.sse_trajectory(*g_csr, *c_csr, psi, dw, 1e-4)

    return {
        "integrate t=20 (2e4 RK4 steps)":
            lambda k: k.integrate_covariance(1.0, 1.0, 0.0, 0.3, -0.4, 0.9, 20.0, 1e-3, True),
        "stationary solve u=+1, chi=0.9":
            lambda k: k.stationary_covariance(1 / 1.9, 10.0, 0.0, 1.0, 0.0, 0.9, 1e-3, 1e-12, 1e5),
        "SSE trajectory N=30, 2e4 steps": sse,
    }


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    try:
        compiled = _backend.load("compiled")
    except ImportError:
        raise SystemExit("compiled extension is not built; reinstall without OPO_UNRAVEL_NO_EXT")
    python = _backend.load("python")
    print(f"{'kernel':<34}{'compiled (s)':>14}{'python (s)':>14}{'speed-up':>10}")
    for name, fn in cases().items():
        tc = best_of(lambda: fn(compiled), args.repeat)
        tp = best_of(lambda: fn(python), args.repeat)
        print(f"{name:<34}{tc:>14.4f}{tp:>14.4f}{tp / tc:>9.0f}x")


if __name__ == "__main__":
    main()
