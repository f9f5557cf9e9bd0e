"""Command-line front end: figure data as CSV plus oracle comparisons.

Exit codes: 0 success, 1 usage error, 2 numerical failure, 3 oracle mismatch.
Flags override values from an optional ``--config`` file of ``key = value``
lines.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    ROBUST,
    ConvergenceError,
    IntegrationError,
    InverseProblemError,
    UnravelingParam,
    ensemble_for_unraveling,
    realizable_region_boundary,
    stationary_covariance_for_unraveling,
    unconstrained_region_boundary,
)
from .fock import (
    FockSpace,
    NoiseCorrelation,
    TruncationWarning,
    gaussian_pure_state,
    moments,
    opo_model,
    photon_tail,
    simulate_ensemble,
    steady_state,
    survival_fock,
)
from .gaussian import (
    GaussianState,
    OpoModel,
    UnphysicalStateError,
    gaussian_overlap,
    largest_eigenvalue,
    stationary_covariance,
)
from .robustness import (
    NoCrossingError,
    evolved_moments,
    figure2_table,
    optimal_unraveling,
    robust_survival_time,
    survival_probability,
    survival_probability_integral,
    survival_time,
)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3
NUMERIC_ERRORS = (ConvergenceError, IntegrationError, InverseProblemError, NoCrossingError,
                  UnphysicalStateError, ArithmeticError, RuntimeError)

ORACLE_TOL = 1e-4
TAIL_FAIL = 1e-8
ORACLE_TIMES = (0.5, 1.0, 2.0)

log = logging.getLogger("opo_unravel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def fmt(x: float) -> str:
    """12 significant digits, always with a decimal point or exponent."""
    s = format(float(x) + 0.0, ".12g")
    if not any(ch in s for ch in ".enia"):
        s += ".0"
    return s


@contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", newline="\n") as fh:
            yield fh


def _write_rows(fh, header, rows):
    fh.write(",".join(header) + "\n")
    for row in rows:
        fh.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")


def _model(cfg, open_interval=False) -> OpoModel:
    chi = cfg.chi
    if open_interval and not 0.0 < chi < 1.0:
        raise UsageError(f"--chi must lie in (0, 1), got {chi}")
    try:
        return OpoModel(chi)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _unraveling(cfg) -> UnravelingParam:
    try:
        return UnravelingParam(cfg.r, cfg.h)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _positive(name, value):
    if not value > 0:
        raise UsageError(f"--{name.replace('_', '-')} must be positive, got {value}")


def cmd_region(cfg) -> int:
    model = _model(cfg)
    if cfg.n < 8:
        raise UsageError("--n must be at least 8")
    realizable = realizable_region_boundary(model, cfg.n)
    unconstrained = unconstrained_region_boundary(model, cfg.n)
    star = 1.0 / (1.0 + model.chi)
    rows = [("realizable", b, g) for b, g in realizable]
    rows += [("unconstrained", b, g) for b, g in unconstrained]
    rows.append(("star", 0.0, star))
    with _sink(cfg.output) as fh:
        _write_rows(fh, ["curve", "beta", "gamma"], rows)
    m_inf = stationary_covariance(model)
    worst = math.inf
    for b, g in realizable:
        a = (b * b + 1.0) / g
        worst = min(worst, (m_inf.gamma - g) * (m_inf.alpha - a) - b * b)
    if worst < -1e-8:
        log.error("realizable vertex outside the unconstrained region (det = %.3g)", worst)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_fig2(cfg) -> int:
    if cfg.chi_grid:
        try:
            grid = [float(v) for v in cfg.chi_grid.split(",") if v.strip()]
        except ValueError:
            raise UsageError("--chi-grid must be a comma-separated list of numbers") from None
    else:
        if cfg.n_chi < 2:
            raise UsageError("--n-chi must be at least 2")
        grid = list(np.linspace(cfg.chi_min, cfg.chi_max, cfg.n_chi))
    if not grid or any(not 0.0 < c < 1.0 for c in grid):
        raise UsageError("every chi in the grid must lie in (0, 1)")
    rows = figure2_table(grid)
    with _sink(cfg.output) as fh:
        _write_rows(fh, ["chi", "tau_R", "alpha_inf", "alpha0_R", "Lambda", "S_inf"], rows)
    return EXIT_OK


def cmd_survival(cfg) -> int:
    model, u = _model(cfg), _unraveling(cfg)
    _positive("t_max", cfg.t_max)
    if cfg.n_t < 2:
        raise UsageError("--n-t must be at least 2")
    m0 = stationary_covariance_for_unraveling(u, model)
    lam = largest_eigenvalue(model)
    times = np.linspace(0.0, cfg.t_max, cfg.n_t)
    scalar = survival_probability(m0.gamma, m0.beta, model, times)
    rows, worst = [], 0.0
    for t, s in zip(times, scalar):
        s_int = survival_probability_integral(m0, model, float(t))
        worst = max(worst, abs(s_int - s))
        rows.append((t, s_int, s, lam))
    with _sink(cfg.output) as fh:
        _write_rows(fh, ["t", "S_integral", "S_scalar", "Lambda"], rows)
    if worst > 1e-10:
        log.error("integral and scalar survival forms disagree by %.3g", worst)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_tau(cfg) -> int:
    model, u = _model(cfg, open_interval=True), _unraveling(cfg)
    st = survival_time(u, model)
    row = (model.chi, u.r, u.h, st.tau, robust_survival_time(model), *st.crossing_bracket)
    with _sink(cfg.output) as fh:
        _write_rows(fh, ["chi", "r", "h", "tau", "tau_R", "t_lo", "t_hi"], [row])
    return EXIT_OK


def cmd_optimize(cfg) -> int:
    model = _model(cfg, open_interval=True)
    if cfg.n_radii < 2 or cfg.n_angles < 4:
        raise UsageError("--n-radii must be >= 2 and --n-angles >= 4")
    res = optimal_unraveling(model, cfg.n_radii, cfg.n_angles, workers=cfg.workers)
    tau_r = robust_survival_time(model)
    with _sink(cfg.output) as fh:
        _write_rows(fh, ["r", "h", "tau"], res.grid)
    report = sys.stderr if cfg.output in (None, "-") else sys.stdout
    u, tau = res.unraveling, res.survival_time.tau
    print(f"chi            {fmt(model.chi)}", file=report)
    print(f"argmax u       {fmt(u.r)} {fmt(u.h)}", file=report)
    print(f"tau(argmax)    {fmt(tau)}", file=report)
    print(f"tau_R closed   {fmt(tau_r)}", file=report)
    print(f"difference     {fmt(tau - tau_r)}", file=report)
    print(f"grid failures  {len(res.failures)} of {len(res.grid) + len(res.failures)}", file=report)
    total = len(res.grid) + len(res.failures)
    if len(res.failures) > 0.05 * total:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_oracle_compare(cfg) -> int:
    model = _model(cfg)
    if cfg.fock_dim < 2:
        raise UsageError("--fock-dim must be at least 2")
    space = FockSpace(cfg.fock_dim)
    lindblad = opo_model(model, space)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        rho = steady_state(lindblad)
    tail = photon_tail(rho)
    if tail > TAIL_FAIL:
        print(f"truncation failure: top Fock level population {tail:.3g} > {TAIL_FAIL:g}; "
              f"raise --fock-dim", file=sys.stderr)
        return EXIT_NUMERIC

    m_inf = stationary_covariance(model)
    _, cov = moments(rho)
    member = stationary_covariance_for_unraveling(ROBUST, model)
    psi = gaussian_pure_state(member, space)
    lines = [
        ("gamma_inf", m_inf.gamma, cov.gamma),
        ("alpha_inf", m_inf.alpha, cov.alpha),
        ("beta_inf", m_inf.beta, cov.beta),
        ("Lambda", largest_eigenvalue(model), float(np.linalg.eigvalsh(rho)[-1])),
    ]
    for t in ORACLE_TIMES:
        _, mt = evolved_moments(member, model, t)
        gauss = gaussian_overlap(GaussianState(member), GaussianState(mt))
        lines.append((f"S_member(t={t:g})", gauss, survival_fock(psi, lindblad, t)))

    failed = False
    print(f"{'quantity':<18}{'gaussian':>20}{'fock':>20}{'abs diff':>14}")
    for name, g, f in lines:
        diff = abs(g - f)
        flag = "" if diff <= ORACLE_TOL else "  FAIL"
        failed |= diff > ORACLE_TOL
        print(f"{name:<18}{fmt(g):>20}{fmt(f):>20}{diff:>14.3e}{flag}")
    print(f"top-level population {tail:.3e} (N = {space.dim})")
    return EXIT_MISMATCH if failed else EXIT_OK


def cmd_simulate(cfg) -> int:
    model, u = _model(cfg), _unraveling(cfg)
    for name in ("dt", "t_relax"):
        _positive(name, getattr(cfg, name))
    if cfg.n_traj < 2:
        raise UsageError("--n-traj must be at least 2")
    if cfg.fock_dim < 2:
        raise UsageError("--fock-dim must be at least 2")
    lindblad = opo_model(model, FockSpace(cfg.fock_dim))
    stats = simulate_ensemble(lindblad, NoiseCorrelation.single(u.u), cfg.n_traj, cfg.t_relax,
                              cfg.dt, cfg.seed, workers=cfg.workers)
    target = ensemble_for_unraveling(u, model).weight_cov
    sample = stats.mean_vector_covariance()
    n = cfg.n_traj
    se = np.sqrt((np.outer(np.diag(target), np.diag(target)) + target ** 2) / (n - 1))
    with _sink(cfg.output) as fh:
        rows = [(str(i), *row) for i, row in enumerate(stats.moments)]
        _write_rows(fh, ["traj", "x_bar", "y_bar", "gamma", "alpha", "beta"], rows)
        fh.write(f"# weight_cov sample xx={fmt(sample[0, 0])} xy={fmt(sample[0, 1])} "
                 f"yy={fmt(sample[1, 1])} target xx={fmt(target[0, 0])} xy={fmt(target[0, 1])} "
                 f"yy={fmt(target[1, 1])} stderr xx={fmt(se[0, 0])} xy={fmt(se[0, 1])} "
                 f"yy={fmt(se[1, 1])}\n")
    if stats.max_tail > TAIL_FAIL:
        log.error("trajectories reach the top Fock level (population %.3g)", stats.max_tail)
        return EXIT_NUMERIC
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="opo-unravel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, func, help_text, chi=0.5):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="file of 'key = value' defaults")
        p.add_argument("-o", "--output", default="-", help="CSV destination (default stdout)")
        p.add_argument("--chi", type=float, default=chi, help="threshold parameter")
        return p

    def unraveling_flags(p):
        p.add_argument("--r", type=float, default=-1.0, help="Re u")
        p.add_argument("--h", type=float, default=0.0, help="Im u")

    p = command("region", cmd_region, "realizable and unconstrained moment regions", chi=0.9)
    p.add_argument("--n", type=int, default=64, help="vertices per curve")

    p = command("fig2", cmd_fig2, "survival time and steady-state quantities versus chi")
    p.add_argument("--chi-min", type=float, default=0.01)
    p.add_argument("--chi-max", type=float, default=0.99)
    p.add_argument("--n-chi", type=int, default=99)
    p.add_argument("--chi-grid", help="explicit comma-separated chi values")

    p = command("survival", cmd_survival, "survival probability of one unraveling")
    unraveling_flags(p)
    p.add_argument("--t-max", type=float, default=50.0)
    p.add_argument("--n-t", type=int, default=201)

    p = command("tau", cmd_tau, "survival time of one unraveling")
    unraveling_flags(p)

    p = command("optimize", cmd_optimize, "maximise the survival time over the unit disk")
    p.add_argument("--n-radii", type=int, default=21)
    p.add_argument("--n-angles", type=int, default=32)
    p.add_argument("--workers", type=int, default=1)

    p = command("oracle-compare", cmd_oracle_compare, "Gaussian formulas against the Fock oracle")
    p.add_argument("--fock-dim", type=int, default=40)

    p = command("simulate", cmd_simulate, "stochastic trajectory ensemble in the Fock basis")
    unraveling_flags(p)
    p.add_argument("--n-traj", type=int, default=500)
    p.add_argument("--t-relax", type=float, default=20.0)
    p.add_argument("--dt", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fock-dim", type=int, default=30)
    p.add_argument("--workers", type=int, default=1)
    return parser


def read_config(path) -> dict[str, str]:
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            values = read_config(args.config)
        except OSError as exc:
            parser.exit(EXIT_USAGE, f"opo-unravel: error: cannot read config: {exc}\n")
        except UsageError as exc:
            parser.exit(EXIT_USAGE, f"opo-unravel: error: {exc}\n")
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in subparser._actions}
        unknown = sorted(set(values) - known - {"config", "func"})
        if unknown:
            parser.exit(EXIT_USAGE, f"opo-unravel: error: unknown config keys: {', '.join(unknown)}\n")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"opo-unravel: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERIC_ERRORS as exc:
        print(f"opo-unravel: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
