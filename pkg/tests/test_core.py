import numpy as np
import pytest

from mfcontrol.core import (
    ControlSchedule,
    DualCoefficients,
    InitialDistribution,
    full_lagrangian,
    grid_fingerprint,
    jr_value_and_grad,
    lagrangian_theta_gradient,
    make_dual,
    objective_Jr,
    objective_Jr_gradient,
    per_agent_objective,
    phi_value_and_grad,
    sample_initial_conditions,
    stopping_check,
)
from mfcontrol.costs import mean_features, running_cost, terminal_cost
from mfcontrol.dynamics import euler_rollout

from conftest import small_spec


def rollout_states(spec, theta, z0):
    return euler_rollout(spec.model, z0, theta, spec.grid).states


class TestPerAgentObjective:
    def test_zero_at_rest_on_target(self, di_spec):
        spec = di_spec
        a = make_dual(np.zeros((spec.grid.n, spec.fmap.r)), spec)
        theta = np.zeros((spec.grid.n, 3))
        assert per_agent_objective(a, theta, spec.costs.target, spec) == pytest.approx(0.0)

    def test_zero_dual_gives_negated_cost(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(0)
        a = make_dual(np.zeros((spec.grid.n, spec.fmap.r)), spec)
        theta = rng.normal(scale=0.3, size=(spec.grid.n, 3))
        z0 = rng.normal(size=6)
        val = per_agent_objective(a, theta, z0, spec)
        Z = rollout_states(spec, ControlSchedule(theta[None]), z0[None])[0]
        h = spec.grid.h
        cost = h * sum(
            running_cost(None, Z[k], theta[k], spec.costs) for k in range(spec.grid.n)
        ) + terminal_cost(Z[-1], spec.costs)
        assert val == pytest.approx(-cost, rel=1e-12)

    def test_matches_term_by_term_oracle(self):
        # independent re-summation of the per-agent saddle objective
        spec = small_spec(n=5, r=4)
        rng = np.random.default_rng(1)
        a_vals = rng.normal(size=(5, 4))
        a = make_dual(a_vals, spec)
        theta = rng.normal(scale=0.4, size=(5, 3))
        z0 = rng.normal(size=6)
        val = per_agent_objective(a, theta, z0, spec)

        h = spec.grid.h
        Z = rollout_states(spec, ControlSchedule(theta[None]), z0[None])[0]
        total = 0.0
        for k in range(5):
            total += 0.5 * h * a_vals[k] @ a_vals[k]  # identity Kr
            total -= h * running_cost(None, Z[k], theta[k], spec.costs)
            zeta = spec.fmap.features(Z[k, :3][None])[0]
            total -= h * a_vals[k] @ zeta
        total -= terminal_cost(Z[-1], spec.costs)
        assert val == pytest.approx(total, rel=1e-12)


class TestFullLagrangian:
    def test_single_agent_equals_per_agent(self):
        spec = small_spec(N=1)
        rng = np.random.default_rng(2)
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        theta = rng.normal(scale=0.3, size=(1, spec.grid.n, 3))
        z0 = rng.normal(size=(1, 6))
        full = full_lagrangian(a, ControlSchedule(theta), spec, z0=z0)
        single = per_agent_objective(a, theta[0], z0[0], spec)
        assert full == pytest.approx(single, rel=1e-12)

    def test_identical_agents_average(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(3)
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        theta_one = rng.normal(scale=0.3, size=(spec.grid.n, 3))
        z0_one = rng.normal(size=6)
        theta = ControlSchedule(np.tile(theta_one, (spec.N, 1, 1)))
        z0 = np.tile(z0_one, (spec.N, 1))
        assert full_lagrangian(a, theta, spec, z0=z0) == pytest.approx(
            per_agent_objective(a, theta_one, z0_one, spec), rel=1e-12
        )

    def test_matches_two_loop_oracle(self):
        # direct evaluation of the four sums without the per-agent split
        spec = small_spec(N=4, n=6, r=5)
        rng = np.random.default_rng(4)
        a_vals = rng.normal(size=(6, 5))
        a = make_dual(a_vals, spec)
        theta = rng.normal(scale=0.3, size=(4, 6, 3))
        z0 = rng.normal(size=(4, 6))
        val = full_lagrangian(a, ControlSchedule(theta), spec, z0=z0)

        h = spec.grid.h
        Z = rollout_states(spec, ControlSchedule(theta), z0)
        N = 4
        total = 0.0
        for k in range(6):
            total += 0.5 * h * a_vals[k] @ a_vals[k]
        for k in range(6):
            for l in range(N):
                total -= h / N * running_cost(None, Z[l, k], theta[l, k], spec.costs)
                zeta = spec.fmap.features(Z[l, k, :3][None])[0]
                total -= h / N * a_vals[k] @ zeta
        for l in range(N):
            total -= terminal_cost(Z[l, -1], spec.costs) / N
        assert val == pytest.approx(total, rel=1e-12)

    def test_separability_identity(self):
        spec = small_spec(N=5, n=7)
        rng = np.random.default_rng(5)
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        theta = rng.normal(scale=0.3, size=(5, spec.grid.n, 3))
        z0 = rng.normal(size=(5, 6))
        full = full_lagrangian(a, ControlSchedule(theta), spec, z0=z0)
        mean = np.mean([
            per_agent_objective(a, theta[l], z0[l], spec) for l in range(5)
        ])
        assert full == pytest.approx(mean, rel=1e-12)


class TestObjectiveJr:
    def test_stationary_single_agent_interaction_only(self):
        spec = small_spec(N=1, alpha3=10.0)
        z0 = spec.costs.target[None]
        theta = ControlSchedule(np.zeros((1, spec.grid.n, 3)))
        val = objective_Jr(theta, spec, z0=z0)
        zeta = spec.fmap.features(spec.costs.target[:3][None])[0]
        expect = spec.grid.h * spec.grid.n * 0.5 * zeta @ zeta
        assert val == pytest.approx(expect, rel=1e-12)

    def test_terminal_component_linear_in_alpha3(self):
        spec1 = small_spec(alpha3=10.0)
        spec2 = small_spec(alpha3=20.0)
        rng = np.random.default_rng(6)
        theta = ControlSchedule(rng.normal(scale=0.3, size=(3, spec1.grid.n, 3)))
        z0 = rng.normal(size=(3, 6))
        spec0 = small_spec(alpha3=0.0)
        j0 = objective_Jr(theta, spec0, z0=z0)
        j1 = objective_Jr(theta, spec1, z0=z0)
        j2 = objective_Jr(theta, spec2, z0=z0)
        assert j2 - j0 == pytest.approx(2 * (j1 - j0), rel=1e-10)

    def test_saddle_substitution_identity(self):
        # plugging the per-node maximizer a* = Kr c into the Lagrangian and
        # negating recovers J_r exactly
        spec = small_spec(N=4, n=6, r=5)
        rng = np.random.default_rng(7)
        theta = ControlSchedule(rng.normal(scale=0.3, size=(4, 6, 3)))
        z0 = rng.normal(size=(4, 6))
        Z = rollout_states(spec, theta, z0)
        c = np.stack([
            mean_features(Z[:, k, :3], spec.fmap) for k in range(spec.grid.n)
        ])
        a_star = make_dual(spec.fmap.kr_apply(c), spec)
        jr = objective_Jr(theta, spec, z0=z0)
        lag = full_lagrangian(a_star, theta, spec, z0=z0)
        assert jr == pytest.approx(-lag, rel=1e-10)

    def test_exact_kernel_close_to_features_at_high_rank(self):
        spec = small_spec(N=6, r=2000, alpha1=1.0)
        rng = np.random.default_rng(8)
        theta = ControlSchedule(rng.normal(scale=0.2, size=(6, spec.grid.n, 3)))
        z0 = rng.normal(size=(6, 6))
        a = objective_Jr(theta, spec, z0=z0, exact_kernel=True)
        b = objective_Jr(theta, spec, z0=z0, exact_kernel=False)
        assert a == pytest.approx(b, rel=0.05)


class TestGradients:
    @pytest.mark.parametrize("kind", ["double_integrator", "quadrotor"])
    def test_jr_gradient_matches_fd(self, kind):
        spec = small_spec(kind=kind, N=3, n=8)
        q = spec.model.control_dim
        rng = np.random.default_rng(9)
        theta = rng.normal(scale=0.3, size=(3, 8, q))
        z0 = rng.normal(scale=0.5, size=(3, spec.model.state_dim))
        _, g = jr_value_and_grad(theta, z0, spec)
        eps = 1e-6
        fd = np.zeros_like(g)
        for l in range(3):
            for k in range(8):
                for j in range(q):
                    t1, t2 = theta.copy(), theta.copy()
                    t1[l, k, j] += eps
                    t2[l, k, j] -= eps
                    v1, _ = jr_value_and_grad(t1, z0, spec)
                    v2, _ = jr_value_and_grad(t2, z0, spec)
                    fd[l, k, j] = (v1 - v2) / (2 * eps)
        assert np.linalg.norm(g - fd) <= 1e-5 * np.linalg.norm(fd)

    def test_mirror_symmetry(self):
        # two agents mirrored through the x = 0 plane stay mirrored in the
        # exact-kernel gradient (the isotropic kernel and the target respect
        # the mirror; a random feature draw would not)
        spec = small_spec(N=2)
        n = spec.grid.n
        rng = np.random.default_rng(10)
        th1 = rng.normal(scale=0.3, size=(n, 3))
        M = np.diag([-1.0, 1.0, 1.0])
        theta = np.stack([th1, th1 @ M])
        z1 = rng.normal(size=6)
        z0 = np.stack([z1, z1 * np.array([-1, 1, 1, -1, 1, 1])])
        g = objective_Jr_gradient(ControlSchedule(theta), spec, z0=z0,
                                  exact_kernel=True)
        assert np.allclose(g[1], g[0] @ M, rtol=1e-8, atol=1e-10)

    def test_no_interaction_decouples(self):
        # vanishing interaction weight: the gradient splits into per-agent
        # blocks, each 1/N times the decoupled single-agent gradient
        spec = small_spec(N=3, alpha1=1e-300)
        rng = np.random.default_rng(11)
        theta = rng.normal(scale=0.3, size=(3, spec.grid.n, 3))
        z0 = rng.normal(size=(3, 6))
        g = objective_Jr_gradient(ControlSchedule(theta), spec, z0=z0)
        for l in range(3):
            sub = small_spec(N=1, alpha1=1e-300)
            gl = objective_Jr_gradient(ControlSchedule(theta[[l]]), sub, z0=z0[[l]])
            assert np.allclose(gl[0] / 3.0, g[l], rtol=1e-10)

    def test_lagrangian_gradient_is_scaled_phi_gradient(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(12)
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        theta = rng.normal(scale=0.3, size=(spec.N, spec.grid.n, 3))
        z0 = rng.normal(size=(spec.N, 6))
        gL = lagrangian_theta_gradient(a, ControlSchedule(theta), spec, z0=z0)
        _, gphi = phi_value_and_grad(a.values, theta, z0, spec)
        assert np.allclose(gL, -gphi / spec.N, rtol=1e-14)


class TestStoppingCheck:
    def test_dual_zero_at_feature_mean(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(13)
        theta = ControlSchedule(rng.normal(scale=0.2, size=(spec.N, spec.grid.n, 3)))
        z0 = rng.normal(size=(spec.N, 6))
        Z = rollout_states(spec, theta, z0)
        c = np.stack([mean_features(Z[:, k, :3], spec.fmap) for k in range(spec.grid.n)])
        a = make_dual(c, spec)  # identity Kr: a* = c
        rep = stopping_check(theta, a, spec, eps=1e-9, z0=z0)
        assert rep.dual_residual_max == pytest.approx(0.0, abs=1e-12)
        assert rep.dual_ok

    def test_infinite_tolerance_accepts_all(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(14)
        theta = ControlSchedule(rng.normal(scale=0.2, size=(spec.N, spec.grid.n, 3)))
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        rep = stopping_check(theta, a, spec, eps=np.inf)
        assert rep.primal_ok and rep.dual_ok and rep.mfc_ok

    def test_norms_are_reported(self, di_spec):
        spec = di_spec
        rng = np.random.default_rng(15)
        theta = ControlSchedule(rng.normal(scale=0.2, size=(spec.N, spec.grid.n, 3)))
        a = make_dual(rng.normal(size=(spec.grid.n, spec.fmap.r)), spec)
        rep = stopping_check(theta, a, spec, eps=0.5)
        assert rep.primal_grad_norm > 0
        assert rep.dual_residual_max > 0
        assert rep.jr_grad_norm > 0
        assert np.isfinite(rep.jr_value)


class TestSampling:
    def test_zero_variance_pins_to_mean(self):
        init = InitialDistribution(mean=np.arange(6.0), variance=0.0, seed=1)
        Z = sample_initial_conditions(init, 7)
        assert np.allclose(Z, np.arange(6.0))

    def test_law_of_large_numbers(self):
        init = InitialDistribution(mean=np.array([0, -0.5, 0, 0, 0, 0.0]),
                                   variance=0.8, seed=2)
        N = 100_000
        Z = sample_initial_conditions(init, N)
        tol = 3 * np.sqrt(0.8 / N)
        assert np.all(np.abs(Z.mean(axis=0) - init.mean) <= tol)

    def test_same_seed_identical(self):
        init = InitialDistribution(mean=np.zeros(6), variance=1.0, seed=3)
        assert np.array_equal(sample_initial_conditions(init, 10),
                              sample_initial_conditions(init, 10))

    def test_active_dims_mask(self):
        init = InitialDistribution(mean=np.zeros(12), variance=1.0, seed=4,
                                   active_dims=(0, 1, 2))
        Z = sample_initial_conditions(init, 5)
        assert np.all(Z[:, 3:] == 0.0)
        assert np.any(Z[:, :3] != 0.0)


def test_dual_coefficients_validation():
    with pytest.raises(ValueError):
        DualCoefficients(values=np.zeros((3,)))
    with pytest.raises(ValueError):
        DualCoefficients(values=np.full((2, 2), np.nan))


def test_grid_fingerprint_distinguishes_grids():
    from mfcontrol.dynamics import TimeGrid

    assert grid_fingerprint(TimeGrid(T=5.0, n=50)) != grid_fingerprint(TimeGrid(T=5.0, n=49))
