import numpy as np
import pytest

from mfcontrol.core import InitialDistribution, ProblemSpec
from mfcontrol.costs import CostSpec, ObstacleField, default_obstacles
from mfcontrol.dynamics import DynamicsModel, TimeGrid
from mfcontrol.features import KernelSpec, TrainingConfig, fit_mlp_features, rff_features


@pytest.fixture(scope="session")
def desk_trained_map():
    """Desk-budget trained feature map, fitted once for the whole session."""
    spec = KernelSpec(alpha1=1.0)
    return fit_mlp_features(spec, TrainingConfig(), seed=0)


def small_spec(kind="double_integrator", N=3, n=8, r=6, alpha1=2.0,
               alpha2=0.0, alpha3=10.0, T=1.0, obstacles=False, seed=3):
    """Small, fast problem instance for unit tests."""
    model = DynamicsModel(kind=kind)
    d = model.state_dim
    kernel = KernelSpec(alpha1=alpha1)
    target = np.zeros(d)
    target[2] = 7.0
    mean = np.zeros(d)
    mean[1] = -0.5
    return ProblemSpec(
        model=model,
        grid=TimeGrid(T=T, n=n),
        kernel=kernel,
        fmap=rff_features(kernel, r=r, seed=seed),
        costs=CostSpec(alpha2=alpha2, alpha3=alpha3, target=target,
                       obstacles=default_obstacles() if obstacles else ObstacleField()),
        init=InitialDistribution(mean=mean, variance=0.5, seed=1,
                                 active_dims=None if d == 6 else (0, 1, 2)),
        N=N,
    )


@pytest.fixture
def di_spec():
    return small_spec()


@pytest.fixture
def quad_spec():
    return small_spec(kind="quadrotor")
