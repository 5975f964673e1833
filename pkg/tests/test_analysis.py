import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from armreg import analysis, datagen, filters, problems
from armreg.errors import BracketError, DomainError


HOLDER2 = problems.IndexFunction.holder(2.0)


@pytest.fixture(scope="module")
def diag_wp():
    # theta = 2, p = 1, u - m0 = phi(K^T K) v with phi = lam^{p+1}
    return problems.diagonal_problem(problems.SpectrumModel("polynomial", 2.0, 2000), 1.0, HOLDER2)


def test_tikhonov_reference_scalar(scalar):
    assert analysis.tikhonov_reference(scalar, np.array([1.0]), 1.0)[0] == pytest.approx(0.5)


def test_showalter_reference_scalar(scalar):
    out = analysis.showalter_reference(scalar, np.array([2.0]), 1.0)[0]
    assert out == pytest.approx(2 * (1 - math.exp(-1)), rel=1e-14)
    assert out == pytest.approx(1.26424, abs=1e-5)


@pytest.mark.parametrize("ref", [analysis.tikhonov_reference, analysis.showalter_reference])
def test_references_shrink_to_m0(kernel16, ref):
    m0 = np.linspace(-1, 1, 16)
    out = ref(kernel16, np.ones(16), 1e12, m0=m0)
    np.testing.assert_allclose(out, m0, atol=1e-10)


def test_reference_rejects_bad_eps(scalar):
    with pytest.raises(ValueError):
        analysis.tikhonov_reference(scalar, np.ones(1), 0.0)


@pytest.mark.parametrize("p", [0.0, 0.5])
def test_tikhonov_reference_dense_formula(kernel16, p):
    wp = problems.whiten(kernel16.base, p)
    y = np.random.default_rng(0).standard_normal(16)
    m0 = np.full(16, 0.3)
    eps = 1e-3
    BtB = wp.B_spectrum.reconstruct().T @ wp.B_spectrum.reconstruct()
    direct = m0 + np.linalg.solve(eps * np.eye(16) + BtB, wp.Omega @ wp.K.T @ (y - wp.K @ m0))
    np.testing.assert_allclose(analysis.tikhonov_reference(wp, y, eps, m0=m0), direct, rtol=1e-8, atol=1e-10)


@pytest.mark.parametrize(
    "ref, expected",
    [
        (analysis.tikhonov_reference, filters.expected_mean_nonstationary),
        (analysis.showalter_reference, filters.expected_mean_stationary),
    ],
)
@pytest.mark.parametrize("p", [0.0, 1.0])
def test_expectation_identities(kernel16, ref, expected, p):
    # the references are affine in the datum, so their mean is their value at the noiseless datum
    wp = problems.whiten(kernel16.base, p)
    alpha, T = 0.5, 200.0
    ybar = wp.base.A @ wp.base.u_true
    np.testing.assert_allclose(ref(wp, ybar, alpha / T), expected(wp, alpha, T), rtol=1e-8, atol=1e-12)


def test_tikhonov_matches_euler_arm_within_h_budget(kernel16):
    h, T, alpha = 1.0, 100.0, 1.0
    stream = datagen.simulate_stream(kernel16.base, T, h, seed=12)
    arm = filters.nonstationary_run(kernel16, stream, alpha, trajectory=False).final_mean
    ref = analysis.tikhonov_reference(kernel16, datagen.averaged_datum(stream), alpha / T)
    s1 = kernel16.K_spectrum.singular_values[0]
    assert np.linalg.norm(arm - ref) / np.linalg.norm(ref) <= 3 * h * s1**2 / alpha


@pytest.mark.parametrize(
    "kind, eps, nu, sup, bound",
    [
        (analysis.TIKHONOV, 0.1, 1.0, 0.1 / 1.1, 0.1),
        (analysis.TIKHONOV, 0.1, 0.0, 1.0, 1.0),
        (analysis.SHOWALTER, 0.1, 2.0, (2 * 0.1 / math.e) ** 2, 4 * 0.01),
    ],
)
def test_residual_sup_check(kind, eps, nu, sup, bound):
    got_sup, got_bound = analysis.residual_sup_check(kind, eps, nu)
    assert got_sup == pytest.approx(sup, rel=1e-3)
    assert got_bound == pytest.approx(bound)
    assert got_sup <= got_bound


@given(st.floats(1e-6, 1.0), st.floats(0.0, 1.0))
@settings(deadline=None)
def test_tikhonov_qualification(eps, nu):
    sup, bound = analysis.residual_sup_check(analysis.TIKHONOV, eps, nu)
    assert sup <= bound * (1 + 1e-12)


@given(st.floats(1e-6, 1.0), st.floats(0.0, 8.0))
@settings(deadline=None)
def test_showalter_unbounded_qualification(eps, nu):
    sup, bound = analysis.residual_sup_check(analysis.SHOWALTER, eps, nu)
    assert sup <= bound * (1 + 1e-12)


def test_tikhonov_beyond_qualification():
    with pytest.raises(DomainError):
        analysis.residual_sup_check(analysis.TIKHONOV, 0.1, 1.5)


def test_effective_dimension_examples():
    assert analysis.effective_dimension([1.0, 1.0], 1.0) == 1.0
    assert analysis.effective_dimension([1.0, 0.5, 0.0], 1e-14) == pytest.approx(2.0)


def test_effective_dimension_decreasing_and_bounded():
    lam = problems.SpectrumModel("polynomial", 1.5, 300).eigenvalues()
    vals = [analysis.effective_dimension(lam, e) for e in np.logspace(-10, 2, 60)]
    assert np.all(np.diff(vals) < 0)
    assert max(vals) <= lam.size


def test_effective_dimension_polynomial_slope():
    theta = 2.0
    lam = problems.SpectrumModel("polynomial", theta, 100_000).eigenvalues()
    eps = np.logspace(-6, -2, 9)
    slope = analysis.fit_slope([(e, analysis.effective_dimension(lam, e)) for e in eps])
    assert slope == pytest.approx(-1 / (2 * theta), rel=0.1)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_effective_dimension_exponential_growth(c):
    lam = problems.SpectrumModel("exponential", c, 400).eigenvalues()
    eps = np.logspace(-40, -5, 15)
    N = [analysis.effective_dimension(lam, e) for e in eps]
    growth = np.polyfit(np.log(1 / eps), N, 1)[0]
    assert growth == pytest.approx(1 / (2 * c), rel=0.1)


def test_mse_exact_scalar(scalar):
    br = analysis.mse_exact(scalar, filters.NONSTATIONARY, 1.0, 1.0)
    assert (br.bias_sq, br.variance, br.total) == pytest.approx((0.25, 0.25, 0.5))
    assert br.rmse == pytest.approx(math.sqrt(0.5))
    stat = analysis.mse_exact(scalar, filters.STATIONARY, 1.0, 1e6)
    assert stat.variance == pytest.approx(0.5)
    assert stat.bias_sq == pytest.approx(0.0, abs=1e-300)


@pytest.mark.parametrize("method", analysis.METHODS)
def test_mse_exact_matches_monte_carlo(kernel16, method):
    reps, alpha, T = 2000, 1.0, 100.0
    batch = datagen.simulate_streams(
        kernel16.base, T, 0.05 if method in (filters.NONSTATIONARY, filters.STATIONARY) else T, range(reps)
    )
    if method == filters.NONSTATIONARY:
        est = filters.exact_nonstationary_mean(kernel16, batch, alpha)
    elif method == filters.STATIONARY:
        est = filters.stationary_exponential_reference(kernel16, batch, alpha)
    else:
        ref = analysis.tikhonov_reference if method == analysis.TIKHONOV else analysis.showalter_reference
        est = ref(kernel16, datagen.averaged_datum(batch), alpha / T)
    sq = np.sum((est - kernel16.base.u_true) ** 2, axis=-1)
    se = sq.std(ddof=1) / math.sqrt(reps)
    assert abs(sq.mean() - analysis.mse_exact(kernel16, method, alpha, T).total) <= 3 * se


def test_mse_exact_scaling_in_source(kernel16):
    e = kernel16.initial_error
    a = analysis.mse_exact(kernel16, filters.NONSTATIONARY, 2.0, 50.0, source=e)
    b = analysis.mse_exact(kernel16, filters.NONSTATIONARY, 2.0, 50.0, source=3 * e)
    assert b.bias_sq == pytest.approx(9 * a.bias_sq, rel=1e-12)
    assert b.variance == a.variance


@pytest.mark.parametrize("method", [filters.NONSTATIONARY, filters.STATIONARY])
def test_mse_euler_converges_to_exact(kernel16, method):
    exact = analysis.mse_exact(kernel16, method, 1.0, 100.0).total
    gaps = [abs(analysis.mse_euler(kernel16, method, 1.0, 100.0, h).total - exact) for h in (1.0, 0.5, 0.25)]
    assert gaps[0] / gaps[1] == pytest.approx(2.0, rel=0.15)
    assert gaps[1] / gaps[2] == pytest.approx(2.0, rel=0.15)


def test_mse_unknown_method(scalar):
    with pytest.raises(ValueError):
        analysis.mse_exact(scalar, "ridge", 1.0, 1.0)


def test_mse_bound_dominates_on_generated_instance(diag_wp):
    br = analysis.mse_exact(diag_wp, filters.NONSTATIONARY, 10.0, 10.0)
    rep = analysis.mse_bound(diag_wp, filters.NONSTATIONARY, HOLDER2, 10.0, 10.0)
    assert rep.regime == "nonstat-case1"
    assert rep.bound_value >= br.total


def test_stationary_bound_variance_part(diag_wp):
    tr = analysis.trace_omega(diag_wp)
    for t in (1.0, 100.0):
        rep = analysis.mse_bound(diag_wp, filters.STATIONARY, HOLDER2, 4.0, t)
        assert rep.variance_bound == pytest.approx(tr / 8.0)


def test_mse_bound_case_two_and_errors(diag_wp):
    rep = analysis.mse_bound(
        diag_wp, filters.NONSTATIONARY, problems.IndexFunction.holder(3.0), 1.0, 10.0, c=2.0
    )
    assert rep.regime == "nonstat-case2"
    assert rep.bias_bound == pytest.approx(2.0 * 0.01)
    with pytest.raises(ValueError):
        analysis.mse_bound(diag_wp, filters.STATIONARY, problems.IndexFunction.logarithmic(1.0), 1.0, 1.0)
    with pytest.raises(ValueError):
        analysis.mse_bound(diag_wp, analysis.TIKHONOV, HOLDER2, 1.0, 1.0)


def test_variance_min_form(diag_wp):
    for alpha in np.logspace(-3, 3, 5):
        for t in np.logspace(-1, 4, 4):
            var = analysis.mse_exact(diag_wp, filters.NONSTATIONARY, alpha, t).variance
            assert var <= min(analysis.nonstationary_variance_bounds(diag_wp, alpha, t)) * (1 + 1e-12)
            svar = analysis.mse_exact(diag_wp, filters.STATIONARY, alpha, t).variance
            assert svar <= analysis.stationary_variance_bound(diag_wp, alpha) * (1 + 1e-12)


@given(st.floats(0.1, 3.0), st.floats(0.0, 2.0))
@settings(max_examples=20, deadline=None)
def test_theta_psi_monotone_and_ratio(nu, p):
    wp = problems.diagonal_problem(
        problems.SpectrumModel("polynomial", 2.0, 300),
        p,
        problems.IndexFunction.holder(nu),
        require_trace_class=False,
    )
    phi = problems.IndexFunction.holder(nu)
    eps = np.logspace(-8, 0, 40)
    theta = [analysis.theta_function(wp, phi, e) for e in eps]
    psi = [analysis.psi_function(wp, phi, e) for e in eps]
    assert np.all(np.diff(theta) >= 0) and np.all(np.diff(psi) >= 0)
    bound = math.sqrt(analysis.trace_omega(wp))
    assert all(b / a <= bound * (1 + 1e-12) for a, b in zip(theta, psi))


@pytest.mark.parametrize("seed", range(20))
def test_solver_residuals(seed):
    rng = np.random.default_rng(seed)
    p, nu, T = rng.uniform(0, 2), rng.uniform(0.2, 3), 10 ** rng.uniform(3, 8)
    phi = problems.IndexFunction.holder(nu)
    wp = problems.diagonal_problem(
        problems.SpectrumModel("polynomial", 2.0, 500), p, phi, require_trace_class=False
    )
    for solver, fn in (
        (analysis.solve_alpha_theta, analysis.theta_function),
        (analysis.solve_alpha_psi, analysis.psi_function),
    ):
        eps, alpha = solver(wp, phi, T)
        assert abs(fn(wp, phi, eps) * math.sqrt(T) - 1) <= 1e-10
        assert alpha == pytest.approx(T * eps ** (p + 1))


def test_psi_closed_form(diag_wp):
    for T in (1e3, 1e5):
        eps, alpha = analysis.solve_alpha_psi(diag_wp, HOLDER2, T)
        assert eps == pytest.approx(T ** (-1 / 6), rel=1e-9)
        assert alpha == pytest.approx(T ** (2 / 3), rel=1e-9)


def test_solver_bracket_error(diag_wp):
    with pytest.raises(BracketError, match="no sign change"):
        analysis.solve_alpha_theta(diag_wp, HOLDER2, 1e-3)


@pytest.mark.parametrize(
    "points, expected",
    [
        ([(x, x ** (-3 / 16)) for x in (1.0, 2.0, 5.0, 9.0)], -0.1875),
        ([(x, 7.0 * x**2) for x in (0.5, 1.0, 3.0)], 2.0),
    ],
)
def test_fit_slope(points, expected):
    assert analysis.fit_slope(points) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("points", [[(1, 1), (2, 2)], [(1, 1), (2, 0), (3, 1)], [(1, 1), (-2, 2), (3, 1)]])
def test_fit_slope_rejects(points):
    with pytest.raises(ValueError):
        analysis.fit_slope(points)


def test_analytic_rate_rough_full_grid():
    wp = problems.whiten(problems.example_problem("rough", 512), 0.0)
    alphas = 0.1 * 2.0 ** np.arange(40)
    Ts = 100.0 * 2.0 ** np.arange(10)
    best = [min(analysis.mse_exact(wp, filters.NONSTATIONARY, a, T).rmse for a in alphas) for T in Ts]
    assert analysis.fit_slope(zip(Ts, best)) == pytest.approx(-3 / 16, abs=0.05)
