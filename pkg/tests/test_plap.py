import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import closed_form_1d, element_stiffness, linear_dirichlet, linear_resolvent, numerical_gradient
from pgelfand.errors import ConfigurationError, NumericalError
from pgelfand.geometry import Field, build_interval, build_mask_domain, norm
from pgelfand.plap import (
    Regularization,
    SolveConfig,
    energy,
    energy_gradient,
    energy_hessian,
    resolvent,
    scale_solution,
    solve_dirichlet,
)


@pytest.fixture(scope="module")
def square16():
    return build_mask_domain("square", 16)


@pytest.fixture(scope="module")
def disc16():
    return build_mask_domain("disc", 16)


def smooth_random(grid, seed):
    rng = np.random.default_rng(seed)
    xy = grid.coordinates()
    a, b = rng.uniform(-2, 2, 2)
    return Field(grid, np.sin(3 * xy[:, 0] + a) * np.cos(2 * xy[:, -1] + b) + rng.uniform(-0.1, 0.1, grid.n_interior))


class TestConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [{"p": 1.0}, {"p": float("nan")}, {"grad_tol": 0.0}, {"armijo_slope": 0.7}, {"backtrack": 1.0},
         {"max_newton_iters": 0}],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigurationError):
            SolveConfig(**kwargs)

    def test_schedule_is_geometric(self):
        s = Regularization(1e-1, 1e-8, 8).schedule()
        assert s[0] == pytest.approx(1e-1) and s[-1] == pytest.approx(1e-8)
        np.testing.assert_allclose(s[1:] / s[:-1], 10 ** (-1.0), rtol=1e-12)

    def test_single_stage_uses_end(self):
        assert Regularization(1e-1, 1e-6, 1).schedule().tolist() == [1e-6]

    @pytest.mark.parametrize("a,b,n", [(1e-8, 1e-1, 3), (1e-1, 0.0, 3), (1e-1, 1e-8, 0)])
    def test_bad_schedule(self, a, b, n):
        with pytest.raises(ConfigurationError):
            Regularization(a, b, n)


class TestEnergy:
    def test_stiffness_matches_element_loop(self, disc16):
        u = smooth_random(disc16, 0)
        H = energy_hessian(u, 2.0, 0.0).toarray()
        A = element_stiffness(disc16).toarray()
        np.testing.assert_allclose(H, A, atol=1e-12)

    def test_1d_stiffness(self):
        g = build_interval(1.0, 9)
        H = energy_hessian(Field.zeros(g), 2.0, 0.0).toarray()
        np.testing.assert_allclose(H, element_stiffness(g).toarray(), atol=1e-12)

    def test_quadratic_energy_at_p2(self, square16):
        u = smooth_random(square16, 1)
        A = element_stiffness(square16)
        assert energy(u, 2.0) == pytest.approx(0.5 * u.values @ (A @ u.values), rel=1e-12)

    @pytest.mark.parametrize("p,eps", [(1.5, 1e-2), (1.2, 1e-3), (2.0, 0.0), (1.8, 0.0)])
    def test_gradient_matches_finite_differences(self, p, eps):
        g = build_mask_domain("square", 6)
        u = smooth_random(g, 2)
        fd = numerical_gradient(lambda v: energy(Field(g, v), p, eps), u.values)
        np.testing.assert_allclose(energy_gradient(u, p, eps).values, fd, rtol=1e-6, atol=1e-8)

    @pytest.mark.parametrize("p", [1.5, 1.2])
    def test_hessian_matches_finite_differences(self, p):
        g = build_mask_domain("disc", 8)
        u = smooth_random(g, 3)
        eps = 1e-2
        H = energy_hessian(u, p, eps).toarray()
        for k in range(0, g.n_interior, 7):
            col = numerical_gradient(lambda v: energy_gradient(Field(g, v), p, eps).values[k], u.values)
            np.testing.assert_allclose(H[k], col, rtol=1e-5, atol=1e-7)

    def test_gradient_at_zero_is_zero_without_eps(self, square16):
        assert norm(energy_gradient(Field.zeros(square16), 1.3, 0.0)) == 0.0

    def test_hessian_needs_eps_below_two(self, square16):
        with pytest.raises(ConfigurationError):
            energy_hessian(Field.zeros(square16), 1.5, 0.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.05, 2.0), st.floats(0.01, 50.0), st.integers(0, 10_000))
    def test_homogeneity(self, p, t, seed):
        g = build_mask_domain("square", 6)
        u = smooth_random(g, seed)
        assert energy(u * t, p) == pytest.approx(t**p * energy(u, p), rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(1.05, 2.0), st.floats(0.0, 1.0), st.integers(0, 10_000))
    def test_convex_along_segments(self, p, s, seed):
        g = build_mask_domain("disc", 8)
        u, v = smooth_random(g, seed), smooth_random(g, seed + 1) * 3
        mid = energy(u * (1 - s) + v * s, p)
        assert mid <= (1 - s) * energy(u, p) + s * energy(v, p) + 1e-12


class TestDirichlet:
    def test_one_node_hand_solution(self):
        # 2 (2u)^(1/2) = 1/2 at the single node of h = 1/2
        g = build_interval(1.0, 3)
        u, rep = solve_dirichlet(Field(g, [1.0]), SolveConfig(p=1.5))
        assert rep.converged
        assert u.values[0] == pytest.approx(1 / 32, rel=1e-9)

    @pytest.mark.parametrize("p", [1.2, 1.5, 2.0])
    def test_1d_closed_form(self, p):
        g = build_interval(1.0, 129)
        u, rep = solve_dirichlet(Field(g, np.ones(g.n_interior)), SolveConfig(p=p))
        assert rep.converged
        x = np.linspace(0, 1, 8 * 128 + 1)
        err = np.max(np.abs(g.evaluate(u.values, x) - closed_form_1d(x, p)))
        assert err < 2e-5

    def test_p2_matches_direct_solve(self, disc16):
        f = smooth_random(disc16, 4)
        u, rep = solve_dirichlet(f, SolveConfig(p=2.0))
        assert rep.converged and rep.stage_iterations == [1]
        np.testing.assert_allclose(u.values, linear_dirichlet(disc16, f.values), atol=1e-12)

    def test_zero_data(self, square16):
        u, rep = solve_dirichlet(Field.zeros(square16), SolveConfig(p=1.5))
        assert norm(u) == 0.0 and rep.converged

    def test_contract_is_weak_gradient_bound(self, square16):
        f = smooth_random(square16, 5) * 7
        cfg = SolveConfig(p=1.5)
        u, rep = solve_dirichlet(f, cfg)
        weak = energy_gradient(u, 1.5, 1e-8 * norm(f) ** 2) - Field(square16, square16.mass * f.values)
        assert rep.converged
        assert rep.grad_norm <= cfg.grad_tol * max(1.0, norm(f))
        assert norm(weak) <= cfg.grad_tol * max(1.0, norm(f))

    def test_non_finite_data(self, square16):
        with pytest.raises(NumericalError):
            solve_dirichlet(Field(square16, np.full(square16.n_interior, np.nan)), SolveConfig())

    def test_warm_start_gives_same_answer(self, square16):
        f = smooth_random(square16, 6)
        cfg = SolveConfig(p=1.5)
        u, _ = solve_dirichlet(f, cfg)
        w, rep = solve_dirichlet(f, cfg, u0=u * 1.01)
        assert rep.converged
        assert norm(w - u) < 1e-8

    @pytest.mark.parametrize("p", [1.5, 2.0])
    def test_order_preserving(self, disc16, p):
        f = smooth_random(disc16, 7)
        g = f + Field(disc16, np.abs(smooth_random(disc16, 8).values))
        cfg = SolveConfig(p=p)
        u, _ = solve_dirichlet(f, cfg)
        v, _ = solve_dirichlet(g, cfg)
        assert np.all(v.values >= u.values - 1e-9)

    @pytest.mark.parametrize("p,lam", [(1.5, 4.0), (1.2, 0.3), (2.0, 7.0)])
    def test_exact_homogeneity_of_solve(self, square16, p, lam):
        f = smooth_random(square16, 9)
        cfg = SolveConfig(p=p)
        u, _ = solve_dirichlet(f, cfg)
        v, _ = solve_dirichlet(f * lam, cfg)
        ref = scale_solution(u, lam, p)
        assert norm(v - ref) / norm(ref) < 1e-9

    def test_odd_operator(self, square16):
        f = smooth_random(square16, 10)
        cfg = SolveConfig(p=1.5)
        u, _ = solve_dirichlet(f, cfg)
        v, _ = solve_dirichlet(-f, cfg)
        assert norm(u + v) < 1e-10 * norm(u)


class TestResolvent:
    def test_p2_matches_direct_solve(self, disc16):
        f = smooth_random(disc16, 11)
        u, rep = resolvent(0.3, f, SolveConfig())
        assert rep.converged
        np.testing.assert_allclose(u.values, linear_resolvent(disc16, 0.3, f.values), atol=1e-12)

    def test_small_alpha_is_nearly_identity(self, square16):
        f = smooth_random(square16, 12)
        u, _ = resolvent(1e-6, f, SolveConfig(p=1.5))
        assert norm(u - f) < 1e-3 * norm(f)

    def test_constant_is_damped(self, square16):
        f = Field(square16, np.ones(square16.n_interior))
        u, _ = resolvent(1.0, f, SolveConfig(p=1.5))
        assert 0 < u.values.min() and u.values.max() < 1

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_rejects_non_positive_alpha(self, square16, alpha):
        with pytest.raises(ConfigurationError):
            resolvent(alpha, Field.zeros(square16), SolveConfig())

    def test_zero(self, square16):
        u, rep = resolvent(0.5, Field.zeros(square16), SolveConfig(p=1.5))
        assert norm(u) == 0.0 and rep.converged

    def test_l2_contraction_small_alpha(self, square16):
        # the resolvent is a proximal map in the lumped L^2 inner product
        cfg = SolveConfig(p=1.5)
        f, g = smooth_random(square16, 13), smooth_random(square16, 14)
        s = max(norm(f), norm(g))
        u, _ = resolvent(1e-3, f, cfg, scale=s)
        v, _ = resolvent(1e-3, g, cfg, scale=s)
        assert norm(u - v, 2) <= norm(f - g, 2) * (1 + 1e-9)


class TestScaleSolution:
    def test_factor(self):
        g = build_interval(1.0, 5)
        u = Field(g, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(scale_solution(u, 4.0, 1.5).values, [16.0, 32.0, 48.0])

    def test_negative_lambda_integer_exponent(self):
        g = build_interval(1.0, 5)
        u = Field(g, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(scale_solution(u, -2.0, 1.5).values, [-4.0, -8.0, -12.0])
        np.testing.assert_allclose(scale_solution(u, -2.0, 2.0).values, [-2.0, -4.0, -6.0])

    def test_negative_lambda_fractional_exponent(self):
        g = build_interval(1.0, 5)
        with pytest.raises(ConfigurationError):
            scale_solution(Field.zeros(g), -2.0, 1.7)
