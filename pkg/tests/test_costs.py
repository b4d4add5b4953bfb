import numpy as np
import pytest

from mfcontrol.costs import (
    CostSpec,
    ObstacleBox,
    ObstacleField,
    default_obstacles,
    interaction_direct,
    interaction_features,
    mean_features,
    obstacle_Q,
    running_cost,
    terminal_cost,
)
from mfcontrol.features import KernelSpec, TrainingConfig, fit_mlp_features, rff_features


def gauss_density(x, mu, var):
    x, mu, var = map(np.asarray, (x, mu, var))
    norm = (2 * np.pi) ** -1.5 / np.sqrt(np.prod(var))
    return norm * np.exp(-0.5 * np.sum((x - mu) ** 2 / var))


class TestObstacleQ:
    field = default_obstacles()

    def test_far_outside_is_zero(self):
        assert obstacle_Q(np.array([10.0, 10.0, 10.0]), self.field) == 0.0

    def test_at_first_density_peak(self):
        # (0,0,2) is inside the first box and outside the second
        x = np.array([0.0, 0.0, 2.0])
        expect = gauss_density(x, [0, 0, 2], [9, 3, 9])
        assert obstacle_Q(x, self.field) == pytest.approx(expect, rel=1e-12)
        assert expect == pytest.approx((2 * np.pi) ** -1.5 / np.sqrt(243.0), rel=1e-12)

    def test_at_second_density_peak(self):
        # (2.5,0,2) is inside the second box, outside the first (x > 2)
        x = np.array([2.5, 0.0, 2.0])
        expect = gauss_density(x, [2.5, 0, 2], [9, 3, 3])
        assert obstacle_Q(x, self.field) == pytest.approx(expect, rel=1e-12)

    def test_nonnegative_everywhere(self):
        rng = np.random.default_rng(0)
        X = rng.uniform(-5, 8, size=(500, 3))
        assert np.all(self.field.Q(X) >= 0.0)

    def test_gradient_inside_matches_fd(self):
        x = np.array([0.5, 0.1, 3.0])  # strictly inside the first box
        g = self.field.Q_grad(x[None])[0]
        eps = 1e-7
        for j in range(3):
            e = np.zeros(3)
            e[j] = eps
            fd = (self.field.Q(x + e) - self.field.Q(x - e)) / (2 * eps)
            assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-12)

    def test_gradient_outside_is_zero(self):
        assert np.allclose(self.field.Q_grad(np.array([[5.0, 5.0, 5.0]])), 0.0)

    def test_box_validation(self):
        with pytest.raises(ValueError):
            ObstacleBox(lo=(1, 0, 0), hi=(0, 1, 1), mean=(0, 0, 0), variances=(1, 1, 1))
        with pytest.raises(ValueError):
            ObstacleBox(lo=(0, 0, 0), hi=(1, 1, 1), mean=(0, 0, 0), variances=(1, 0, 1))

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            obstacle_Q(np.array([np.nan, 0, 0]), self.field)


class TestRunningCost:
    def test_zero_when_idle_outside(self):
        spec = CostSpec(alpha2=1e7, alpha3=1.0, target=np.zeros(6),
                        obstacles=default_obstacles())
        z = np.array([10.0, 10, 10, 0, 0, 0])
        assert running_cost(0.0, z, np.zeros(3), spec) == 0.0

    def test_control_energy(self):
        spec = CostSpec(alpha2=0.0, alpha3=1.0, target=np.zeros(6))
        assert running_cost(0.0, np.zeros(6), np.array([1, 2, 3.0]), spec) == pytest.approx(14.0)

    def test_obstacle_weighting(self):
        spec = CostSpec(alpha2=1e7, alpha3=1.0, target=np.zeros(6),
                        obstacles=default_obstacles())
        z = np.array([0.0, 0, 2, 0, 0, 0])
        theta = np.array([1.0, 0, 0])
        expect = 1.0 + 1e7 * gauss_density(z[:3], [0, 0, 2], [9, 3, 9])
        assert running_cost(0.0, z, theta, spec) == pytest.approx(expect, rel=1e-12)

    def test_nonnegative(self):
        spec = CostSpec(alpha2=1e3, alpha3=1.0, target=np.zeros(6),
                        obstacles=default_obstacles())
        rng = np.random.default_rng(1)
        Z = rng.normal(scale=2, size=(100, 6))
        TH = rng.normal(size=(100, 3))
        assert np.all(running_cost(0.0, Z, TH, spec) >= 0.0)


class TestTerminalCost:
    target = np.array([0, 0, 7, 0, 0, 0.0])

    def test_zero_at_target(self):
        spec = CostSpec(alpha2=0.0, alpha3=1e4, target=self.target)
        assert terminal_cost(self.target, spec) == 0.0

    def test_unit_distance_di_weight(self):
        spec = CostSpec(alpha2=0.0, alpha3=1e4, target=self.target)
        z = self.target + np.array([1.0, 0, 0, 0, 0, 0])
        assert terminal_cost(z, spec) == pytest.approx(5e3)

    def test_quadrotor_weight(self):
        tgt = np.zeros(12)
        spec = CostSpec(alpha2=0.0, alpha3=2e3, target=tgt)
        z = np.zeros(12)
        z[2] = 2.0
        assert terminal_cost(z, spec) == pytest.approx(2e3 / 2 * 4.0)

    def test_validation(self):
        with pytest.raises(ValueError):
            CostSpec(alpha2=-1.0, alpha3=0.0, target=np.zeros(6))


class TestInteractionEvaluators:
    def test_single_point_direct(self):
        spec = KernelSpec(alpha1=3.0)
        val = interaction_direct(np.array([[0.5, 0.5, 0.5]]), spec.pairwise)
        assert val == pytest.approx(1.5)

    def test_two_coincident_points(self):
        spec = KernelSpec(alpha1=3.0)
        P = np.array([[1.0, 2.0, 3.0], [1.0, 2.0, 3.0]])
        assert interaction_direct(P, spec.pairwise) == pytest.approx(1.5)

    def test_three_points_hand_sum(self):
        spec = KernelSpec(alpha1=2.0)
        rng = np.random.default_rng(2)
        P = rng.normal(size=(3, 3))
        total = 0.0
        for i in range(3):
            for j in range(3):
                d = P[i] - P[j]
                total += 2.0 * np.exp(-d @ d / 2.0)
        assert interaction_direct(P, spec.pairwise) == pytest.approx(total / 18.0, rel=1e-12)

    def test_mean_features_basics(self):
        fmap = rff_features(KernelSpec(alpha1=1.0), r=9, seed=0)
        x = np.array([[0.1, 0.2, 0.3]])
        assert np.allclose(mean_features(x, fmap), fmap.features(x)[0])
        two = np.vstack([x, x])
        assert np.allclose(mean_features(two, fmap), fmap.features(x)[0])

    def test_mean_features_permutation_invariant(self):
        fmap = rff_features(KernelSpec(alpha1=2.0), r=6, seed=1)
        rng = np.random.default_rng(3)
        P = rng.normal(size=(20, 3))
        perm = rng.permutation(20)
        assert np.allclose(mean_features(P, fmap), mean_features(P[perm], fmap))

    def test_single_point_features(self):
        fmap = rff_features(KernelSpec(alpha1=2.0), r=11, seed=4)
        x = np.array([[0.3, -0.4, 0.5]])
        z = fmap.features(x)[0]
        assert interaction_features(x, fmap) == pytest.approx(0.5 * z @ z, rel=1e-12)

    @pytest.mark.parametrize("backend", ["random_feature", "trained_network"])
    def test_factorization_identity(self, backend):
        # the O(N^2) expanded-kernel sum equals the O(N r) factored form
        spec = KernelSpec(alpha1=2.0)
        if backend == "random_feature":
            fmap = rff_features(spec, r=24, seed=5)
        else:
            cfg = TrainingConfig(hidden=10, r=8, num_samples=200, iterations=30,
                                 batch_size=32)
            fmap, _ = fit_mlp_features(spec, cfg, seed=5)
        rng = np.random.default_rng(6)
        for N in (1, 2, 17, 300):
            P = rng.uniform(-3, 3, size=(N, 3))
            direct = interaction_direct(P, fmap.pairwise)
            fact = interaction_features(P, fmap)
            assert abs(direct - fact) <= 1e-10 * abs(direct)

    def test_factorization_identity_general_kr(self):
        from mfcontrol.features import FeatureMap

        rng = np.random.default_rng(7)
        A = rng.normal(size=(5, 5))
        Kr = A @ A.T + 5 * np.eye(5)
        base = rff_features(KernelSpec(alpha1=1.0), r=5, seed=8)
        fmap = FeatureMap(kind=base.kind, r=5, input_dim=3, alpha1=1.0,
                          bandwidth=1.0, seed=8, parameters=base.parameters, Kr=Kr)
        P = rng.uniform(-2, 2, size=(40, 3))
        direct = interaction_direct(P, fmap.pairwise)
        fact = interaction_features(P, fmap)
        assert abs(direct - fact) <= 1e-10 * abs(direct)
