import json

import numpy as np
import pytest

from oracles import linear_resolvent
from pgelfand.errors import ConfigurationError
from pgelfand.geometry import Field, build_mask_domain, norm
from pgelfand.plap import SolveConfig
from pgelfand.verify import (
    PropertyReport,
    best_estimate_ratio,
    check_best_estimate,
    check_lq_contraction,
    check_lq_contractions,
    check_resolvent_convergence,
    check_resolvent_identity,
    check_scaling_law,
    random_field,
    run_battery,
)


@pytest.fixture(scope="module")
def square12():
    return build_mask_domain("square", 12)


@pytest.fixture(scope="module")
def disc12():
    return build_mask_domain("disc", 12)


class TestReport:
    def test_pass_flag(self):
        assert PropertyReport("x", 1.0, 1.0).passed
        assert not PropertyReport("x", 1.0, 1.5).passed
        assert not PropertyReport("x", 1.0, float("nan")).passed
        assert not PropertyReport("x", 1.0, 0.0, error="boom").passed

    def test_dict_is_json(self):
        r = PropertyReport("x", 1.0, 0.5, [{"a": 1}], {"q": "inf"})
        doc = json.loads(json.dumps(r.to_dict()))
        assert doc["passed"] and doc["n_samples"] == 1


class TestRandomField:
    def test_amplitude_controls_sup(self, square12):
        rng = np.random.default_rng(0)
        for _ in range(10):
            assert norm(random_field(square12, rng)) <= 10.0

    def test_reproducible(self, square12):
        a = random_field(square12, np.random.default_rng(4))
        b = random_field(square12, np.random.default_rng(4))
        assert np.array_equal(a.values, b.values)


class TestResolventIdentity:
    def test_equal_parameters(self, square12):
        f = random_field(square12, np.random.default_rng(1))
        r = check_resolvent_identity(0.5, 0.5, f, SolveConfig(p=1.5))
        assert r.worst < 1e-12

    def test_zero_data(self, square12):
        r = check_resolvent_identity(0.1, 1.0, Field.zeros(square12), SolveConfig(p=1.5))
        assert r.worst == 0.0 and r.passed

    def test_linear_case_against_matrices(self, disc12):
        f = random_field(disc12, np.random.default_rng(2))
        alpha, beta = 0.1, 1.0
        jb = linear_resolvent(disc12, beta, f.values)
        rhs = (alpha / beta) * f.values + (1 - alpha / beta) * jb
        assert np.max(np.abs(jb - linear_resolvent(disc12, alpha, rhs))) < 1e-10
        r = check_resolvent_identity(alpha, beta, f, SolveConfig())
        assert r.worst < 1e-10

    @pytest.mark.parametrize("p", [1.5, 2.0])
    def test_nonlinear_cases_pass(self, disc12, p):
        f = random_field(disc12, np.random.default_rng(3))
        for a, b in ((0.1, 1.0), (1.0, 0.1)):
            assert check_resolvent_identity(a, b, f, SolveConfig(p=p)).passed


class TestContraction:
    def test_linear_l2_bound(self, square12):
        r = check_lq_contraction(square12, 0.5, 2, 10, SolveConfig(), seed=0)
        assert r.worst <= 1e-10

    def test_shared_samples_for_several_q(self, square12):
        reps = check_lq_contractions(square12, 0.1, (2, 4, 8, np.inf), 8, SolveConfig(p=1.5), seed=1)
        assert [r.details["q"] for r in reps] == [2, 4, 8, "inf"]
        assert all(r.passed and r.n_samples == 8 for r in reps)

    def test_indicator_shift_sup_norm(self, disc12):
        r = check_lq_contraction(disc12, 1.0, np.inf, 8, SolveConfig(p=1.5), seed=2)
        assert "indicator shift" in {s["kind"] for s in r.samples}
        assert r.passed

    def test_rejects_small_q(self, square12):
        with pytest.raises(ConfigurationError):
            check_lq_contraction(square12, 1.0, 1.5, 4, SolveConfig())

    def test_small_parameter_l2_still_contracts(self, square12):
        # the lumped-L^2 contraction holds for every alpha (proximal map)
        r = check_lq_contraction(square12, square12.h**2, 2, 10, SolveConfig(p=1.5), seed=3)
        assert r.passed

    def test_small_parameter_sup_norm_defect_is_small(self):
        # documented limitation: for p < 2 and alpha ~ h^2 the discrete resolvent
        # may expand sup-norm differences slightly (P1 on right triangles)
        g = build_mask_domain("square", 32)
        r = check_lq_contraction(g, g.h**2, np.inf, 12, SolveConfig(p=1.5), seed=3)
        assert r.worst < 1e-2


class TestBestEstimate:
    def test_scale_invariance(self, square12):
        r = check_best_estimate(square12, 1.5, 2, SolveConfig(), seed=0)
        assert r.passed
        assert r.worst == pytest.approx(1.0, abs=1e-9)

    def test_linear_reduces_to_lipschitz(self, square12):
        r = check_best_estimate(square12, 2.0, 2, SolveConfig(), seed=1)
        assert r.passed and np.isfinite(r.details["constant"])

    def test_homogeneous_pair_closed_form(self, square12):
        # f = 2g with g >= 0: u - v = (2^(1/(p-1)) - 1) v
        p = 1.5
        from pgelfand.plap import solve_dirichlet

        g = Field(square12, np.abs(random_field(square12, np.random.default_rng(5)).values))
        f = g * 2
        cfg = SolveConfig(p=p)
        v, _ = solve_dirichlet(g, cfg)
        u, _ = solve_dirichlet(f, cfg)
        expected = (2**2 - 1) * norm(v) / (3 * norm(g)) ** 1.0 / norm(g)
        assert best_estimate_ratio(u, v, f, g, p, np.inf) == pytest.approx(expected, rel=1e-8)

    def test_exponent_range(self, square12):
        with pytest.raises(ConfigurationError):
            check_best_estimate(square12, 2.5, 1, SolveConfig())


class TestResolventConvergence:
    def test_zero_data(self, square12):
        r = check_resolvent_convergence(1.0, (0.1, 0.01), Field.zeros(square12), SolveConfig(p=1.5))
        assert r.passed and all(s["e"] == 0.0 for s in r.samples)

    def test_linear_case_bound(self, square12):
        f = Field(square12, np.full(square12.n_interior, 10.0))
        r = check_resolvent_convergence(1.0, (0.1, 0.03, 0.01, 0.003), f, SolveConfig())
        assert r.passed
        jb = linear_resolvent(square12, 1.0, f.values)
        for s in r.samples:
            exact = np.max(np.abs(linear_resolvent(square12, s["alpha"], jb) - jb))
            assert s["e"] == pytest.approx(exact, rel=1e-8)

    def test_order_of_parameters(self, square12):
        with pytest.raises(ConfigurationError):
            check_resolvent_convergence(1.0, (0.01, 0.1), Field.zeros(square12), SolveConfig())


class TestScalingLaw:
    def test_unit_lambda(self, square12):
        f = random_field(square12, np.random.default_rng(6))
        assert check_scaling_law(1.5, [1.0], f, SolveConfig()).worst < 1e-12

    def test_factor_sixteen(self, square12):
        f = random_field(square12, np.random.default_rng(7))
        r = check_scaling_law(1.5, [4.0], f, SolveConfig())
        assert r.passed

    def test_linear(self, disc12):
        f = random_field(disc12, np.random.default_rng(8))
        assert check_scaling_law(2.0, [0.3, 17.0], f, SolveConfig()).worst <= 1e-9

    def test_negative_lambda(self, square12):
        with pytest.raises(ConfigurationError):
            check_scaling_law(1.5, [-1.0], Field.zeros(square12), SolveConfig())


class TestBattery:
    def test_unknown_property(self):
        with pytest.raises(ConfigurationError):
            run_battery(properties=["nope"])

    def test_small_battery_passes(self, square12):
        reps = run_battery(domains=["square"], ps=(1.5,), n_samples=4, n_identity=1, n_estimate=1,
                           grids={"square": square12})
        assert reps and all(r.passed for r in reps)
        assert {r.name for r in reps} == {"resolvent_identity", "lq_contraction", "best_estimate",
                                          "resolvent_convergence", "scaling_law"}

    def test_solver_failure_marks_check_failed(self, square12):
        cfg = SolveConfig(max_newton_iters=1, grad_tol=1e-30)
        reps = run_battery(domains=["square"], ps=(1.5,), cfg=cfg, properties=["scaling_law"],
                           grids={"square": square12})
        assert len(reps) == 1 and not reps[0].passed and reps[0].error

    def test_deterministic(self, square12):
        kw = dict(domains=["square"], ps=(1.5,), n_samples=3, n_identity=1, n_estimate=1,
                  grids={"square": square12}, properties=["lq_contraction", "resolvent_identity"], seed=9)
        a = [r.to_dict() for r in run_battery(**kw)]
        b = [r.to_dict() for r in run_battery(**kw, jobs=2)]
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
