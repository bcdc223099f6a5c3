import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from hessianlab.errors import ArgumentError, DataError, NonConvergenceError
from hessianlab.solver import (
    Chart,
    ProblemSpec,
    estimate_sup_slope,
    fourier_modes,
    glue_subsolutions,
    jacobian_apply,
    nested_sup_slope,
    residual,
    solve_dirichlet_ball,
    solve_periodic,
)
from hessianlab.symfunc import OperatorSpec, eval_f
from hessianlab.torusgrid import HermitianField, ScalarField, TorusGrid, complex_hessian_from_real, integrate
from hessianlab.viscosity import check_subsolution

TWO_PI = 2 * np.pi
S11 = OperatorSpec.sigma(1, 1)
S22 = OperatorSpec.sigma(2, 2)
Q212 = OperatorSpec.quotient(2, 1, 2)


def _sine_problem(N=32, amp=0.3, **kw):
    g = TorusGrid(1, N)
    x, _ = g.coords()
    return ProblemSpec(S11, HermitianField.identity(g), ScalarField(g, amp * np.sin(TWO_PI * x)), **kw)


def _smooth_G(g, amp):
    c = g.coords()
    return ScalarField(g, amp * (np.sin(TWO_PI * c[0]) * np.cos(TWO_PI * c[-1]) + 0.5 * np.cos(TWO_PI * c[1])))


@pytest.fixture(scope="module")
def sine_solution():
    prob = _sine_problem()
    return prob, solve_periodic(prob)


# -- periodic solves ----------------------------------------------------------------


def test_problem_validation():
    g = TorusGrid(1, 8)
    G = ScalarField.constant(g, 0.0)
    with pytest.raises(DataError):
        ProblemSpec(S11, HermitianField.identity(g, -1.0), G)
    with pytest.raises(ArgumentError):
        ProblemSpec(S11, HermitianField.identity(g), G, beta=0.0)
    with pytest.raises(ArgumentError):
        ProblemSpec(S22, HermitianField.identity(g), G)


def test_constant_solution():
    g = TorusGrid(1, 16)
    res = solve_periodic(ProblemSpec(S11, HermitianField.identity(g), ScalarField.constant(g, 0.0)))
    assert np.abs(res.phi.values).max() < 1e-14
    assert abs(res.c) < 1e-14


def test_sigma1_c_matches_integral_identity(sine_solution):
    prob, res = sine_solution
    assert res.residual <= 1e-9
    assert res.c == pytest.approx(-math.log(integrate(prob.G.map(np.exp))), abs=1e-6)
    assert abs(res.phi.values.mean()) < 1e-12
    assert res.phi_sup.values.max() == 0.0


def test_residuals_decrease_on_accepted_steps(sine_solution):
    _, res = sine_solution
    assert not res.continuation
    r = res.residuals
    assert all(b < a for a, b in zip(r, r[1:]))
    assert len(res.dampings) == len(r) - 1
    assert all(0 < d <= 1 for d in res.dampings)
    assert min(res.margins) > 0


def test_monge_ampere_divergence_identity():
    g = TorusGrid(2, 8)
    G = _smooth_G(g, 0.1)
    res = solve_periodic(ProblemSpec(S22, HermitianField.identity(g), G))
    assert res.residual <= 1e-8
    assert math.exp(2 * res.c) * integrate(G.map(lambda v: np.exp(2 * v))) == pytest.approx(1.0, abs=1e-4)


def test_monotone_fixed_point():
    g = TorusGrid(1, 16)
    res = solve_periodic(ProblemSpec(S11, HermitianField.identity(g), ScalarField.constant(g, 0.0), beta=1.0))
    assert np.abs(res.phi.values).max() < 1e-14 and res.c == 0.0


def test_monotone_mode_solves_equation():
    prob = _sine_problem(beta=1.0)
    res = solve_periodic(prob)
    R = residual(prob, res.phi)
    assert np.abs(R).max() <= 1e-9 and res.c == 0.0
    # integrating: 1 = mean(e^{G0 + phi})
    assert integrate(np.exp(prob.G.values + res.phi.values)) == pytest.approx(1.0, abs=1e-9)


def test_infeasible_start_rejected():
    prob = _sine_problem(N=16)
    x, _ = prob.grid.coords()
    with pytest.raises(ArgumentError):
        solve_periodic(prob, ScalarField(prob.grid, np.cos(TWO_PI * x)))


def test_nonconvergence_carries_diagnostics():
    base = _sine_problem(N=16)
    # monotone mode is genuinely nonlinear, so one Newton step cannot finish
    prob = ProblemSpec(S11, base.chi, base.G, beta=1.0, max_newton=1, residual_linf=1e-14)
    with pytest.raises(NonConvergenceError) as info:
        solve_periodic(prob)
    assert "residuals" in info.value.diagnostics


def test_constant_shift_of_G_moves_c(sine_solution):
    prob, res = sine_solution
    shifted = solve_periodic(ProblemSpec(S11, prob.chi, prob.G + 0.7))
    assert shifted.c == pytest.approx(res.c - 0.7, abs=1e-9)
    np.testing.assert_allclose(shifted.phi.values, res.phi.values, atol=1e-9)


@settings(max_examples=6)
@given(st.floats(0.01, 0.3), st.integers(1, 3))
def test_c_perturbation_bound_and_monotonicity(delta, k):
    prob = _sine_problem(N=16)
    x, _ = prob.grid.coords()
    bump = ScalarField(prob.grid, delta * (1 + np.cos(TWO_PI * k * x)) / 2)  # >= 0
    c0 = solve_periodic(prob).c
    c1 = solve_periodic(ProblemSpec(S11, prob.chi, prob.G + bump)).c
    dist = float(np.abs(bump.values).max())
    tol = 2 * prob.residual_linf
    assert c0 - dist - tol <= c1 <= c0 + dist + tol
    assert c1 <= c0 + tol  # G1 >= G0 pointwise


@pytest.mark.parametrize("op", [S11, S22, Q212])
def test_jacobian_matches_finite_differences(op, rng):
    g = TorusGrid(op.n, 16 if op.n == 1 else 8)
    c = g.coords()
    for trial in range(3):
        phi = 0.004 * np.sin(TWO_PI * (c[0] + trial * c[-1])) + 0.01 * np.cos(TWO_PI * c[1])
        psi = rng.normal(size=g.shape)
        psi = np.real(np.fft.ifftn(np.fft.fftn(psi) * (np.abs(np.fft.fftfreq(g.N, 1 / g.N)) <= 3).reshape((-1,) + (1,) * (g.ndim - 1))))
        prob = ProblemSpec(op, HermitianField.identity(g), _smooth_G(g, 0.1))
        cval, dc = 0.1, 0.3
        assert np.all(np.isfinite(residual(prob, phi, cval)))  # feasible state
        J = jacobian_apply(prob, phi, cval, psi, dc)
        t = 1e-6
        fd = (residual(prob, phi + t * psi, cval + t * dc) - residual(prob, phi - t * psi, cval - t * dc)) / (2 * t)
        assert np.abs(J - fd).max() <= 1e-6 * max(1.0, np.abs(fd).max())


def test_jacobian_at_degenerate_eigenvalues():
    g = TorusGrid(2, 8)
    prob = ProblemSpec(Q212, HermitianField.identity(g), ScalarField.constant(g, 0.0))
    x1 = g.coords()[0]
    phi = np.zeros(g.shape)  # lam = (1, 1) everywhere
    psi = np.sin(TWO_PI * x1)
    t = 1e-6
    fd = (residual(prob, phi + t * psi) - residual(prob, phi - t * psi)) / (2 * t)
    np.testing.assert_allclose(jacobian_apply(prob, phi, 0.0, psi), fd, atol=1e-6)


# -- sup-slope ----------------------------------------------------------------------


def test_fourier_modes():
    assert fourier_modes(2, 2) == [(1, 0), (0, 1)]
    assert len(set(fourier_modes(2, 5))) == 5


def test_sup_slope_constant_G():
    g = TorusGrid(1, 16)
    r = estimate_sup_slope(S11, HermitianField.identity(g), ScalarField.constant(g, 0.0), modes=2, budget=200, c_solver=0.0)
    assert r.e_c_upper == pytest.approx(1.0, abs=1e-15)
    assert r.gap == pytest.approx(0.0, abs=1e-15)


def test_sup_slope_upper_bound_and_gap(sine_solution):
    prob, res = sine_solution
    runs = nested_sup_slope(S11, prob.chi, prob.G, [1, 3, 5], budget=3000)
    for r in runs:
        assert r.e_c_upper >= math.exp(res.c) - 1e-8
    vals = [r.e_c_upper for r in runs]
    assert all(b <= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] / math.exp(res.c) - 1 <= 0.05


# -- gluing -------------------------------------------------------------------------


def _circle_cover(g, eps):
    x, _ = g.coords()
    u = ScalarField(g, 0.1 * np.sin(TWO_PI * x))
    charts = []
    for centre in (0.25, 0.75):
        dist = np.abs((x - centre + 0.5) % 1.0 - 0.5)
        ratio = dist / 0.4
        domain = ratio < 1
        core = dist <= 0.26
        v = u + eps * (2 - 4 * np.minimum(ratio, 1.5) ** 4)
        charts.append(Chart(domain, core, v, eps))
    return u, charts


def test_single_chart_returns_field():
    g = TorusGrid(1, 16)
    u = ScalarField.constant(g, 0.0)
    full = np.ones(g.shape, dtype=bool)
    v = ScalarField.constant(g, 0.2)
    w = glue_subsolutions(u, [Chart(full, full, v, 0.1)])
    assert np.array_equal(w.values, v.values)


def test_two_interval_sandwich():
    g = TorusGrid(1, 64)
    eps = 0.02
    u, charts = _circle_cover(g, eps)
    w = glue_subsolutions(u, charts)
    assert np.all(u.values <= w.values)
    assert np.all(w.values <= u.values + 3 * eps)


def test_margin_transfers_through_gluing():
    g = TorusGrid(1, 64)
    eps = 0.002
    u, charts = _circle_cover(g, eps)
    w = glue_subsolutions(u, charts)
    chi = HermitianField.identity(g)
    rhs = 0.5
    margins = []
    for ch in charts:
        lam = 1 + (np.roll(ch.v.values, 1, 0) + np.roll(ch.v.values, -1, 0) - 2 * ch.v.values) * g.N**2 / 4
        margins.append(float((lam - rhs)[ch.domain].min()))
    rep = check_subsolution(S11, "f", chi, w, rhs)
    assert rep.violations == []
    assert rep.worst_margin >= min(margins) - 1e-8


def test_cover_violations_reported():
    g = TorusGrid(1, 32)
    u, charts = _circle_cover(g, 0.02)
    bad = Chart(charts[0].domain, charts[0].core, charts[0].v - 1.0, 0.02)
    with pytest.raises(DataError) as info:
        glue_subsolutions(u, [bad, charts[1]])
    assert info.value.points[0][0] == 0
    hole = Chart(charts[1].domain, charts[1].core & (g.coords()[0] < 0.7), charts[1].v, 0.02)
    with pytest.raises(DataError):
        glue_subsolutions(u, [charts[0], hole])


# -- Dirichlet ball -----------------------------------------------------------------


def _radial_oracle(psi_of_rho, R):
    # 1 + (u'' + u'/rho)/4 = psi with u'(0) = 0, u(R) = 0 integrates to
    # u'(rho) = (4/rho) int_0^rho s (psi(s) - 1) ds,  u(rho) = -int_rho^R u'
    def slope(rho):
        if rho == 0.0:
            return 0.0
        return 4.0 / rho * quad(lambda s: s * (psi_of_rho(s) - 1.0), 0.0, rho, epsabs=1e-14, epsrel=1e-13)[0]

    def u(rho):
        return np.array([-quad(slope, r, R, epsabs=1e-14, epsrel=1e-13)[0] for r in np.atleast_1d(rho)])

    return u


def test_dirichlet_constant_rhs_matches_ode():
    r = solve_dirichlet_ball(S11, 0.5, 0.0, 2.0)
    oracle = _radial_oracle(lambda rho: 2.0 + 0 * rho, 0.5)
    assert r.residual <= 1e-6
    np.testing.assert_allclose(r.values, oracle(np.linalg.norm(r.points, axis=1)), atol=1e-5)


def test_dirichlet_radial_rhs_matches_ode():
    psi = lambda rho: 1.5 + np.exp(-(rho**2))  # noqa: E731
    r = solve_dirichlet_ball(S11, 0.5, 0.0, lambda x: psi(np.linalg.norm(x, axis=1)), cells=64)
    oracle = _radial_oracle(psi, 0.5)
    pick = np.random.default_rng(0).choice(len(r.values), 300, replace=False)
    np.testing.assert_allclose(r.values[pick], oracle(np.linalg.norm(r.points[pick], axis=1)), atol=1e-5)


def _cubic(x):
    return 0.05 * x[:, 0] ** 3 + 0.03 * x[:, 1] * x[:, 2] ** 2 - 0.04 * x[:, 3] ** 3 + 0.02 * x[:, 0] * x[:, 1] * x[:, 3]


def _cubic_hessian(x):
    H = np.zeros((x.shape[0], 4, 4))
    H[:, 0, 0] = 0.3 * x[:, 0]
    H[:, 1, 2] = H[:, 2, 1] = 0.06 * x[:, 2]
    H[:, 2, 2] = 0.06 * x[:, 1]
    H[:, 3, 3] = -0.24 * x[:, 3]
    H[:, 0, 1] = H[:, 1, 0] = 0.02 * x[:, 3]
    H[:, 0, 3] = H[:, 3, 0] = 0.02 * x[:, 1]
    H[:, 1, 3] = H[:, 3, 1] = 0.02 * x[:, 0]
    return H


@pytest.mark.slow
def test_dirichlet_manufactured_solution():
    def rhs(x):
        lam = np.linalg.eigvalsh(complex_hessian_from_real(_cubic_hessian(x), 2) + np.eye(2))
        return eval_f(S22, lam)

    r = solve_dirichlet_ball(S22, 0.5, _cubic, rhs)
    assert r.residual <= 1e-6
    np.testing.assert_allclose(r.values, _cubic(r.points), atol=1e-5)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_a_doubling_terminates(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=4)

    def boundary(x):
        return a[0] * np.sin(3 * x[:, 0]) + a[1] * np.cos(2 * x[:, 1]) + a[2] * x[:, 0] * x[:, 1] + a[3]

    r = solve_dirichlet_ball(S11, 0.5, boundary, 2.0 + rng.uniform(), cells=8)
    assert r.A >= 1.0 and r.residual <= 1e-6
    on_axis = np.isclose(np.linalg.norm(r.points, axis=1), 0.0)
    assert on_axis.sum() == 1


def test_dirichlet_errors():
    with pytest.raises(ArgumentError):
        solve_dirichlet_ball(S11, 0.5, 0.0, 0.0)
    with pytest.raises(ArgumentError):
        solve_dirichlet_ball(S11, -1.0, 0.0, 2.0)
    with pytest.raises(ArgumentError):
        solve_dirichlet_ball(OperatorSpec.sigma(1, 3), 0.5, 0.0, 2.0)
