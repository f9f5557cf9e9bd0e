import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from opo_unravel.dynamics import ROBUST, UnravelingParam, integrate_covariance, stationary_covariance_for_unraveling
from opo_unravel.gaussian import CovarianceMatrix, OpoModel, UnphysicalStateError, largest_eigenvalue
from opo_unravel.robustness import (
    NoCrossingError,
    Propagator,
    disk_grid,
    evolved_moments,
    figure2_table,
    first_crossing,
    optimal_unraveling,
    robust_survival,
    robust_survival_time,
    survival_curve,
    survival_probability,
    survival_probability_integral,
    survival_time,
)

chis = st.floats(min_value=-0.95, max_value=0.95, allow_nan=False)


@given(chi=chis, t=st.floats(min_value=0, max_value=200))
def test_propagator_invariants(chi, t):
    p = Propagator.at(OpoModel(chi), t)
    assert 0 < p.v_plus <= 1 and 0 < p.v_minus <= 1
    if chi >= 0:
        assert p.v_plus <= p.v_minus


def test_evolved_moments_limits():
    model = OpoModel(0.5)
    m0 = CovarianceMatrix(2 / 3, 1.5, 0.0)
    prop, mt = evolved_moments(m0, model, 0.0)
    assert np.array_equal(prop.as_matrix(), np.eye(2))
    assert np.allclose(mt.as_matrix(), m0.as_matrix(), atol=1e-15)
    _, late = evolved_moments(m0, model, 200.0)
    assert np.allclose(late.as_matrix(), np.diag([2 / 3, 2.0]), atol=1e-12)
    with pytest.raises(ValueError):
        evolved_moments(m0, model, -1.0)


@pytest.mark.parametrize("cov", [CovarianceMatrix(2 / 3, 1.5, 0.0), CovarianceMatrix(0.9, 1.3, 0.25)])
def test_evolved_moments_match_unconditioned_ode(cov):
    model = OpoModel(0.5)
    _, mt = evolved_moments(cov, model, 1.0)
    ode = integrate_covariance(cov, ROBUST, model, 1.0, unravel=False)
    assert np.abs(mt.as_matrix() - ode.as_matrix()).max() < 1e-8


def test_integral_form_limits_and_robust_value():
    model = OpoModel(0.9)
    m0 = CovarianceMatrix(1 / 1.9, 1.9, 0.0)
    assert survival_probability_integral(m0, model, 0.0) == pytest.approx(1.0, abs=1e-12)
    assert survival_probability_integral(m0, model, 1e3) == pytest.approx(math.sqrt(0.19), abs=1e-10)
    assert survival_probability_integral(m0, model, 2.0) == pytest.approx(robust_survival(model, 2.0), abs=1e-10)


def test_integral_form_rejects_non_psd_weight():
    with pytest.raises(UnphysicalStateError):
        survival_probability_integral(CovarianceMatrix(3.0, 1 / 3.0, 0.0), OpoModel(0.5), 1.0)


def test_scalar_form_basics():
    model = OpoModel(0.7)
    assert survival_probability(0.4, 0.3, model, 0.0) == pytest.approx(1.0, abs=1e-15)
    ts = np.linspace(0, 40, 81)
    assert np.allclose(survival_probability(1 / 1.7, 0.0, model, ts), robust_survival(model, ts), atol=1e-13)
    with pytest.raises(ValueError):
        survival_probability(0.0, 0.0, model, 1.0)


def test_robust_survival_limits():
    model = OpoModel(0.9)
    assert robust_survival(model, 0.0) == 1.0
    assert robust_survival(model, 1e4) == pytest.approx(math.sqrt(1 - 0.81), abs=1e-14)
    assert robust_survival(model, robust_survival_time(model)) == pytest.approx(0.60714, abs=1e-5)


@pytest.mark.parametrize("chi", [0.3, 0.9])
def test_formula_equivalence_on_grid(chi):
    model = OpoModel(chi)
    for u in (ROBUST, UnravelingParam(1.0), UnravelingParam(0.0, 1.0), UnravelingParam(0.3, -0.5)):
        m0 = stationary_covariance_for_unraveling(u, model)
        for t in (0.1, 1.0, 5.0, 30.0):
            a = survival_probability_integral(m0, model, t)
            b = survival_probability(m0.gamma, m0.beta, model, t)
            assert abs(a - b) < 1e-10


@settings(max_examples=40, deadline=None)
@given(theta=st.floats(0, 2 * math.pi), rho=st.floats(0, 1), t=st.floats(0, 50))
def test_robust_sandwich(theta, rho, t):
    # every ensemble stays between the robust curve and the stationary purity
    model = OpoModel(0.9)
    u = UnravelingParam(rho * math.cos(theta), rho * math.sin(theta))
    m0 = stationary_covariance_for_unraveling(u, model)
    s = survival_probability(m0.gamma, m0.beta, model, t)
    assert math.sqrt(1 - 0.81) - 1e-12 <= s <= robust_survival(model, t) + 1e-12
    assert 0 < s <= 1 + 1e-12


def test_beta_parity_of_survival():
    model = OpoModel(0.6)
    ts = np.linspace(0, 20, 11)
    assert np.allclose(survival_probability(0.8, 0.4, model, ts), survival_probability(0.8, -0.4, model, ts))


def test_survival_curve_samples():
    curve = survival_curve(ROBUST, OpoModel(0.5), [0.0, 1.0, 2.0])
    assert [t for t, _ in curve.samples] == [0.0, 1.0, 2.0]
    assert curve.samples[0][1] == pytest.approx(1.0)


@pytest.mark.parametrize("chi", [0.1, 0.3, 0.5, 0.7, 0.9])
def test_crossing_identity(chi):
    model = OpoModel(chi)
    tau = robust_survival_time(model)
    assert robust_survival(model, tau) == pytest.approx(largest_eigenvalue(model), abs=1e-12)


def test_tau_values():
    assert robust_survival_time(OpoModel(0.0)) == pytest.approx(2 * math.log(2), abs=1e-15)
    assert robust_survival_time(OpoModel(0.9)) == pytest.approx(
        20 * math.log(3.24 / (2.81 - 2 * math.sqrt(0.19))), rel=1e-12)
    assert robust_survival_time(OpoModel(0.9)) == pytest.approx(10.28, abs=5e-3)


def test_closed_form_matches_literal_expression():
    for chi in (0.05, 0.3, 0.9):
        s = math.sqrt(1 - chi * chi)
        literal = 2 / (1 - chi) * math.log(4 * chi * chi / (2 + chi * chi - 2 * s))
        assert robust_survival_time(OpoModel(chi)) == pytest.approx(literal, rel=1e-12)


def test_small_chi_slope():
    # tau_R = 2 ln 2 (1 + chi) + O(chi^2)
    chi = 1e-4
    assert (robust_survival_time(OpoModel(chi)) - 2 * math.log(2)) / chi == pytest.approx(2 * math.log(2), rel=1e-3)


@pytest.mark.parametrize("chi", [0.01, 0.5, 0.9])
def test_numerical_path_matches_closed_form(chi):
    model = OpoModel(chi)
    st_ = survival_time(ROBUST, model)
    assert st_.tau == pytest.approx(robust_survival_time(model), abs=1e-9)
    lo, hi = st_.crossing_bracket
    assert lo <= st_.tau <= hi and hi - lo <= 0.01 + 1e-12


def test_first_crossing_is_earliest():
    model = OpoModel(0.9)
    m0 = stationary_covariance_for_unraveling(UnravelingParam(0.0, 1.0), model)
    tau = first_crossing(m0.gamma, m0.beta, model).tau
    ts = np.linspace(0, tau, 2000)[:-1]
    assert np.all(survival_probability(m0.gamma, m0.beta, model, ts) > largest_eigenvalue(model))


def test_no_crossing_for_degenerate_ensemble():
    with pytest.raises(NoCrossingError):
        survival_time(ROBUST, OpoModel(0.0))


def test_robust_tau_dominates_grid():
    model = OpoModel(0.9)
    tau_r = robust_survival_time(model)
    for r in np.arange(-1, 1.0001, 0.2):
        for h in np.arange(-1, 1.0001, 0.2):
            if r * r + h * h <= 1 + 1e-12:
                u = UnravelingParam(r, h) if r * r + h * h <= 1 else UnravelingParam(r / math.hypot(r, h), h / math.hypot(r, h))
                assert survival_time(u, model).tau <= tau_r + 1e-9


def test_disk_grid_shape():
    grid = disk_grid(5, 8)
    assert len(grid) == 1 + 4 * 8
    assert sum(1 for u in grid if u.r == 0 and u.h == 0) == 1
    assert any(u.r == -1.0 and u.h == 0.0 for u in grid)


@pytest.mark.slow
@pytest.mark.parametrize("chi", [0.1, 0.5, 0.9])
def test_optimizer_finds_robust_point(chi):
    res = optimal_unraveling(OpoModel(chi))
    assert abs(res.unraveling.u + 1) < 1e-2
    assert not res.failures
    assert res.survival_time.tau == pytest.approx(robust_survival_time(OpoModel(chi)), abs=1e-8)
    assert max(t for _, _, t in res.grid) <= res.survival_time.tau + 1e-9


def test_optimizer_rejects_bad_chi():
    with pytest.raises(ValueError):
        optimal_unraveling(OpoModel(0.0))


def test_figure2_rows():
    rows = figure2_table([0.1, 0.5, 0.9])
    last = rows[-1]
    assert last.alpha_inf == pytest.approx(10.0)
    assert last.alpha0_R == pytest.approx(1.9)
    assert last.S_inf == pytest.approx(math.sqrt(0.19))
    assert last.Lambda == pytest.approx(0.60714, abs=1e-5)
    taus = [r.tau_R for r in rows]
    assert taus == sorted(taus)


def test_critical_slowing_rate():
    prods = [(1 - c) * robust_survival_time(OpoModel(c)) for c in np.linspace(0.9, 0.999, 50)]
    assert all(0 < p < 10 for p in prods)
    assert (1 - 0.999999) * robust_survival_time(OpoModel(0.999999)) == pytest.approx(2 * math.log(4 / 3), abs=1e-2)
