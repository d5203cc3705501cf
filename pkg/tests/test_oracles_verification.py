import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from hft.exceptions import DomainError
from hft.functions import SmoothFunction, function_suite, laguerre_poly
from hft.heatflow_transport import (
    TransportMapGrid,
    build_problem,
    spectral_for_schedule,
    transport_grid,
)
from hft.model_spaces import linear_potential, prepare_potential, sqrt_potential, zero_potential
from hft.oracles_verification import (
    MeasureCDF,
    central_mass_grid,
    compare_transport_to_monge,
    growth_check,
    herbst_bound_ratio,
    herbst_moment_check,
    ks_pushforward,
    lambda_interpolant,
    metric_panels,
    monge_quantile_map,
    monotone_interpolant_check,
    poincare_transfer_check,
    semigroup_inequality_suite,
    transfer_constant,
)
from hft.reports import FAIL, PASS, SKIPPED, VerificationReport
from hft.semigroup import MehlerEvaluator

SCHEDULE = [0.05, 0.1, 0.25, 0.5, 1, 2, 4]


@pytest.fixture(scope="module")
def lag_sched(lag):
    return spectral_for_schedule(lag, min(SCHEDULE))


@pytest.fixture(scope="module")
def mu_gauss(ou):
    return MeasureCDF.for_measure(ou)


@pytest.fixture(scope="module")
def mu_gamma(lag):
    return MeasureCDF.for_measure(lag)


@pytest.fixture(scope="module")
def nu_gamma(lag, sqrt_pot):
    return MeasureCDF.for_measure(lag, sqrt_pot)


def _identity_map(x):
    x = np.asarray(x, dtype=float)
    return TransportMapGrid(x, x.copy(), np.ones_like(x), 1.0, 1.0, 0.0, 0.0)


# quadrature and distribution functions

def test_metric_panels_integrate_density(ou, lag):
    for gen in (ou, lag):
        x, w = metric_panels(gen)
        assert w @ gen.density(x) == pytest.approx(1.0, abs=1e-12)


def test_cdf_matches_scipy(mu_gauss, mu_gamma):
    x = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(mu_gauss.cdf(x), stats.norm.cdf(x), atol=1e-12)
    y = np.linspace(0.01, 20, 17)
    np.testing.assert_allclose(mu_gamma.cdf(y), stats.gamma(1.5).cdf(y), atol=1e-12)


def test_cdf_endpoints(mu_gauss, mu_gamma, nu_gamma):
    for m in (mu_gauss, mu_gamma, nu_gamma):
        assert m.cdf(m.support[1]) == pytest.approx(1.0, abs=1e-8)
        assert m.cdf(m.support[0]) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.floats(0.001, 0.999))
def test_quantile_cdf_round_trip(u):
    # exercised on every measure through module-level caches
    for m in _round_trip_measures():
        x = m.quantile(u)
        assert m.quantile(m.cdf(x)) == pytest.approx(x, abs=1e-9)
        assert m.cdf(x) == pytest.approx(u, abs=1e-12)


_CACHE = {}


def _round_trip_measures():
    if not _CACHE:
        from hft.model_spaces import make_laguerre, make_ou
        ou, lag = make_ou(), make_laguerre(1.5)
        _CACHE["m"] = [
            MeasureCDF.for_measure(ou),
            MeasureCDF.for_measure(lag),
            MeasureCDF.for_measure(lag, prepare_potential(lag, sqrt_potential(0.5))),
            MeasureCDF.for_measure(make_laguerre(3.0)),
        ]
    return _CACHE["m"]


def test_cdf_strictly_increasing(nu_gamma):
    x = np.geomspace(1e-6, 25, 200)
    assert np.all(np.diff(nu_gamma.cdf(x)) > 0)


def test_quantile_rejects_bad_level(mu_gauss):
    with pytest.raises(DomainError):
        mu_gauss.quantile(1.5)


# Monge quantile map

def test_monge_identity(mu_gamma):
    x = np.linspace(0.05, 10, 25)
    np.testing.assert_allclose(monge_quantile_map(mu_gamma, mu_gamma, x), x, atol=1e-9)


@pytest.mark.parametrize("k", [0.5, 1.0, 2.0])
def test_monge_gaussian_shift(ou, mu_gauss, k):
    nu = MeasureCDF.for_measure(ou, prepare_potential(ou, linear_potential(k)))
    x = np.linspace(-3, 3, 25)
    np.testing.assert_allclose(monge_quantile_map(mu_gauss, nu, x), x - k, atol=1e-8)


def test_monge_gamma_dual_quadrature(lag, sqrt_pot, mu_gamma, nu_gamma):
    mu2 = MeasureCDF.for_measure(lag, method="panels")
    nu2 = MeasureCDF.for_measure(lag, sqrt_pot, method="panels")
    x = central_mass_grid(mu_gamma, 30)
    a = monge_quantile_map(mu_gamma, nu_gamma, x)
    b = monge_quantile_map(mu2, nu2, x)
    np.testing.assert_allclose(a, b, atol=1e-7)
    assert np.all(np.diff(a) > 0)


def test_monge_rejects_outside(mu_gamma, nu_gamma):
    with pytest.raises(DomainError):
        monge_quantile_map(mu_gamma, nu_gamma, -1.0)


def test_compare_identity_and_shift(ou, mu_gauss):
    grid = central_mass_grid(mu_gauss, 41)
    rep = compare_transport_to_monge(_identity_map(grid), mu_gauss, mu_gauss, ou)
    assert rep.status == PASS
    assert rep.details["sup_diff"] <= 1e-9
    pot = prepare_potential(ou, linear_potential(1.0))
    tm = transport_grid(build_problem(ou, pot, "mehler"), grid)
    nu = MeasureCDF.for_measure(ou, pot)
    rep = compare_transport_to_monge(tm, mu_gauss, nu, ou)
    assert rep.status == PASS and rep.details["sup_diff"] <= 1e-5
    assert ks_pushforward(tm, mu_gauss, nu) <= 1e-5


def test_compare_detects_wrong_map(ou, mu_gauss):
    grid = central_mass_grid(mu_gauss, 41)
    nu = MeasureCDF.for_measure(ou, prepare_potential(ou, linear_potential(1.0)))
    rep = compare_transport_to_monge(_identity_map(grid), mu_gauss, nu)
    assert rep.status == FAIL
    assert rep.details["sup_diff"] == pytest.approx(1.0, abs=1e-6)


@pytest.mark.slow
def test_monge_discrepancy_shrinks_under_refinement(lag, sqrt_pot, mu_gamma, nu_gamma):
    levels = [
        dict(grid_n=30, ode_tol=1e-6, fd=dict(n_points=1024, dt=4e-3)),
        dict(grid_n=60, ode_tol=1e-8, fd=dict(n_points=4096, dt=1e-3)),
    ]
    gaps = []
    for lv in levels:
        grid = central_mass_grid(mu_gamma, lv["grid_n"])
        prob = build_problem(lag, sqrt_pot, "fd", grid=grid, ode_tol=lv["ode_tol"], **lv["fd"])
        tm = transport_grid(prob, error_estimate=False)
        gaps.append(compare_transport_to_monge(tm, mu_gamma, nu_gamma, lag).details["sup_diff"])
    assert gaps[1] < gaps[0]


# growth

def test_growth_rejects_ou(ou):
    tm = _identity_map(np.linspace(-1, 1, 5))
    with pytest.raises(DomainError, match="gamma-only check"):
        growth_check(tm, ou)


def test_growth_identity_profile(lag):
    grid = np.linspace(0.01, 50, 200)
    tm = _identity_map(grid)
    rep = growth_check(tm, lag)
    # T' = 1 gives 1/sqrt(x), which exceeds 1 below x = 1
    assert rep.details["c_hat"] == pytest.approx(10.0, rel=1e-12)
    assert rep.status == FAIL
    assert rep.details["restricted_status"] == PASS
    assert rep.details["c_hat_restricted"] <= 1.0
    np.testing.assert_allclose(rep.details["profile"]["ratio"], 1 / np.sqrt(grid))


# functional inequality transfer

def test_transfer_constant_is_squared_bound():
    assert transfer_constant(1, 1, 0) == 1.0
    assert transfer_constant(1, 1, 1) == pytest.approx(
        math.exp(2 * math.sqrt(2 * math.pi) * math.exp(0.5)), rel=1e-12)


def test_poincare_needs_ten_functions(ou):
    with pytest.raises(DomainError):
        poincare_transfer_check(ou, prepare_potential(ou, zero_potential()), 1.0,
                                function_suite("ou")[:5])


def test_poincare_ou_linear_saturates(ou):
    pot = prepare_potential(ou, zero_potential())
    suite = [SmoothFunction.constant(2.0)] + function_suite("ou")[:9]
    rep = poincare_transfer_check(ou, pot, 1.0, suite)
    assert rep.status == PASS
    rows = {(r["function"], r["kind"]): r for r in rep.details["rows"]}
    lin = rows[("x", "poincare")]
    assert lin["lhs"] == pytest.approx(1.0, abs=1e-12)
    assert lin["rhs"] == pytest.approx(1.0, abs=1e-12)
    const = rows[("const(2)", "poincare")]
    assert abs(const["lhs"]) < 1e-14 and abs(const["rhs"]) < 1e-14


def test_poincare_gamma_perturbation(lag, sqrt_pot):
    c = transfer_constant(lag.rho1, lag.rho2, sqrt_pot.K)
    rep = poincare_transfer_check(lag, sqrt_pot, c, function_suite("laguerre"))
    assert rep.status == PASS, rep.line()


def test_poincare_detects_too_small_constant(lag, sqrt_pot):
    # the Poincare constant of nu is not below 1/10 of the unperturbed one
    rep = poincare_transfer_check(lag, sqrt_pot, 0.1, function_suite("laguerre"))
    assert rep.status == FAIL


# Herbst moment bound

@given(st.floats(0, 3), st.floats(1.01, 4), st.floats(0.1, 0.99), st.floats(0.01, 3))
def test_herbst_prefactor(c, p, qfrac, lam):
    q = p * qfrac
    r = herbst_bound_ratio(c, p, q, lam)
    assert r >= 1.0
    assert math.log(r) == pytest.approx(c * c * (p - q) * lam / 2, rel=1e-12, abs=1e-14)


def test_herbst_constant_equality(mehler):
    g = SmoothFunction.constant(0.7)
    rep = herbst_moment_check(mehler, g, 2.0, 1.0, SCHEDULE, np.linspace(-3, 3, 7))
    assert rep.status == PASS
    assert abs(rep.margin) < 1e-12


def test_herbst_ou_linear_gaussian_closed_form(mehler):
    g = SmoothFunction.from_expr("x", lipschitz=1.0)
    x = np.linspace(-3, 3, 7)
    rep = herbst_moment_check(mehler, g, 2.0, 1.0, SCHEDULE, x)
    assert rep.status == PASS
    # Gaussian kernel N(x e^{-t}, 1 - e^{-2t}) saturates the bound
    assert abs(rep.margin) < 1e-9
    t = 0.5
    var = 1 - math.exp(-2 * t)
    log_lp = x * math.exp(-t) + 2 * var / 2
    np.testing.assert_allclose(np.log(mehler.pt(lambda y: np.exp(2 * y), t, x)) / 2, log_lp,
                               atol=1e-12)


def test_herbst_gamma(lag_fd):
    g = SmoothFunction.from_expr("2*sqrt(x)", lipschitz=1.0)
    rep = herbst_moment_check(lag_fd, g, 2.0, 1.0, [0.0] + SCHEDULE, np.linspace(0.05, 10, 9))
    assert rep.status == PASS, rep.line()
    assert rep.details["skipped_times"] == [0.0]


def test_herbst_requires_q_below_p(mehler):
    with pytest.raises(DomainError):
        herbst_moment_check(mehler, SmoothFunction.from_expr("x", lipschitz=1.0), 1.0, 2.0,
                            [1.0], [0.0])


def test_herbst_detects_understated_lipschitz(mehler):
    g = SmoothFunction.from_expr("x", lipschitz=1.0)
    rep = herbst_moment_check(mehler, g, 2.0, 1.0, [1.0], np.array([0.0]), lipschitz=0.5)
    assert rep.status == FAIL


# semigroup inequalities

def test_suite_ou(mehler, ou):
    x = np.linspace(-3, 3, 13)
    rep = semigroup_inequality_suite(mehler, ou, function_suite("ou"), [0.0] + SCHEDULE, x)
    assert rep.status == PASS, rep.line()
    checks = {c["name"]: c for c in rep.details["checks"]}
    assert set(checks) >= {"gamma1_contraction", "gamma1_reverse_half", "gamma1_reverse_exp",
                           "gamma2_contraction", "gamma2_reverse_half", "gamma2_reverse_exp",
                           "local_contraction", "local_sqrt_contraction", "local_poincare",
                           "local_log_sobolev"}
    assert checks["gamma1_reverse_half"]["details"]["skipped_times"] == [0.0]


def test_suite_ou_eigenfunction_saturates(mehler, ou):
    f = SmoothFunction.from_expr("x", lipschitz=1.0)
    x = np.linspace(-3, 3, 13)
    rep = semigroup_inequality_suite(mehler, ou, [f], SCHEDULE, x, ns=(1,))
    checks = {c["name"]: c for c in rep.details["checks"]}
    assert abs(checks["gamma1_contraction"]["margin"]) <= 1e-8
    assert abs(checks["local_sqrt_contraction"]["margin"]) <= 1e-8


def test_suite_constant_all_zero(mehler, ou):
    rep = semigroup_inequality_suite(mehler, ou, [SmoothFunction.constant(1.5)], SCHEDULE,
                                     np.linspace(-2, 2, 5))
    assert rep.status == PASS
    assert abs(rep.margin) < 1e-12


def test_suite_laguerre_spectral(lag, lag_sched):
    rep = semigroup_inequality_suite(lag_sched, lag, function_suite("laguerre"), SCHEDULE,
                                     np.linspace(0.05, 10, 13))
    assert rep.status == PASS, rep.line()


def test_suite_laguerre_ell2_positive_margin(lag, lag_sched):
    rep = semigroup_inequality_suite(lag_sched, lag, [laguerre_poly(2, 1.5)], SCHEDULE,
                                     np.linspace(0.05, 10, 13), ns=(2,))
    gam = [c for c in rep.details["checks"] if c["name"].startswith("gamma2")]
    assert all(c["status"] == PASS and c["margin"] > 0 for c in gam)


def test_suite_rejects_n3(mehler, ou):
    with pytest.raises(DomainError):
        semigroup_inequality_suite(mehler, ou, function_suite("ou"), SCHEDULE, [0.0], ns=(3,))


def test_suite_detects_violation(ou):
    # the same kernels checked against an exaggerated curvature must fail
    fake = dataclasses.replace(ou, rho1=1.5, rho2=1.5)
    rep = semigroup_inequality_suite(MehlerEvaluator(ou), fake,
                                     [SmoothFunction.from_expr("x", lipschitz=1.0)],
                                     [0.5, 1.0], np.linspace(-1, 1, 3), ns=(1,))
    assert rep.status == FAIL


def test_suite_deterministic(mehler, ou):
    args = (mehler, ou, function_suite("ou")[:3], [0.1, 1.0], np.linspace(-2, 2, 5))
    a = semigroup_inequality_suite(*args).to_json()
    b = semigroup_inequality_suite(*args).to_json()
    assert a == b


# Lambda interpolant

def test_lambda_constant_zero(mehler):
    vals, nxt = lambda_interpolant(mehler, SmoothFunction.constant(1.0), 1, 1.0, 0.3,
                                   [0.0, 0.5, 1.0])
    assert np.all(np.abs(vals) < 1e-14) and np.all(np.abs(nxt) < 1e-14)


def test_lambda_ou_linear(mehler):
    f = SmoothFunction.from_expr("x", lipschitz=1.0)
    s = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
    vals, nxt = lambda_interpolant(mehler, f, 0, 1.0, 0.4, s)
    # Lambda_0(s) = P_s((P_{1-s} x)^2) at x = 0.4 with P_r x = e^{-r} x
    expect = np.exp(-2 * (1 - s)) * (np.exp(-2 * s) * 0.16 + 1 - np.exp(-2 * s))
    np.testing.assert_allclose(vals, expect, rtol=1e-10)
    np.testing.assert_allclose(nxt, np.exp(-2 * (1 - s)), rtol=1e-10)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_lambda_check_ou(mehler, n):
    f = SmoothFunction.from_expr("x**3 - 3*x")
    rep = monotone_interpolant_check(mehler, f, n, 1.0, 0.4, [0.1, 0.3, 0.5, 0.7, 0.9])
    assert rep.status == PASS, rep.line()
    assert rep.name == f"lambda{n}_interpolant"
    assert rep.details["monotone"]


def test_lambda_check_laguerre(lag_sched):
    f = SmoothFunction.from_expr("exp(-x)", positive=True)
    rep = monotone_interpolant_check(lag_sched, f, 1, 1.0, 1.2, [0.2, 0.5, 0.8])
    assert rep.status == PASS, rep.line()


def test_lambda_rejects_bad_inputs(mehler):
    f = SmoothFunction.from_expr("x", lipschitz=1.0)
    with pytest.raises(DomainError):
        monotone_interpolant_check(mehler, f, 3, 1.0, 0.0, [0.5])
    with pytest.raises(DomainError):
        lambda_interpolant(mehler, f, 1, 1.0, 0.0, [1.5])


# reports

def test_report_round_trip():
    rep = VerificationReport("x", PASS, math.inf, {"t": 1.0}, {"seed": 3}, {"v": np.float64(2.0)})
    d = rep.to_dict()
    assert d["margin"] == "inf" and d["details"]["v"] == 2.0
    back = VerificationReport.from_dict(d)
    assert back.margin == math.inf and back.status == PASS
    assert VerificationReport("s", SKIPPED, 0.0).passed
