"""Running, terminal, obstacle, and interaction costs.

The running cost is control energy plus a weighted obstacle penalty; the
terminal cost is a quadratic pull toward a target state. Population
interaction energy has three evaluators: the exact O(N^2) pairwise sum, the
same sum under the expanded kernel, and the factored O(N r) form through
feature means. The factored form equals the expanded pairwise sum exactly
(up to float accumulation), which is the identity the whole solver leans
on.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .features import FeatureMap

_NORM3 = (2.0 * np.pi) ** -1.5


@dataclass(frozen=True)
class ObstacleBox:
    """Axis-aligned box carrying a diagonal Gaussian density bump."""

    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        mu = np.asarray(self.mean, dtype=float)
        var = np.asarray(self.variances, dtype=float)
        if lo.shape != (3,) or hi.shape != (3,) or mu.shape != (3,) or var.shape != (3,):
            raise ValueError("obstacle fields must be 3-vectors")
        if np.any(lo > hi):
            raise ValueError("box bounds must satisfy lo <= hi")
        if np.any(var <= 0):
            raise ValueError("variances must be positive")
        for name, v in (("lo", lo), ("hi", hi), ("mean", mu), ("variances", var)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def density(self, X: np.ndarray) -> np.ndarray:
        D = (X - self.mean) ** 2 / self.variances
        norm = _NORM3 / np.sqrt(np.prod(self.variances))
        return norm * np.exp(-0.5 * np.sum(D, axis=-1))

    def inside(self, X: np.ndarray) -> np.ndarray:
        return np.all((X >= self.lo) & (X <= self.hi), axis=-1)


@dataclass(frozen=True)
class ObstacleField:
    boxes: tuple[ObstacleBox, ...] = ()

    def Q(self, X: np.ndarray) -> np.ndarray:
        """Sum of in-box Gaussian densities at spatial points X (..., 3)."""
        X = np.asarray(X, dtype=float)
        out = np.zeros(X.shape[:-1])
        for box in self.boxes:
            out += box.density(X) * box.inside(X)
        return out

    def Q_grad(self, X: np.ndarray) -> np.ndarray:
        """Subgradient of Q: in-box density gradient, zero outside."""
        X = np.asarray(X, dtype=float)
        out = np.zeros_like(X)
        for box in self.boxes:
            g = -box.density(X)[..., None] * (X - box.mean) / box.variances
            out += g * box.inside(X)[..., None]
        return out


def default_obstacles() -> ObstacleField:
    """The two-box obstacle course used by the double-integrator runs."""
    return ObstacleField(
        boxes=(
            ObstacleBox(
                lo=(-2.0, -0.5, 0.0), hi=(2.0, 0.5, 7.0),
                mean=(0.0, 0.0, 2.0), variances=(9.0, 3.0, 9.0),
            ),
            ObstacleBox(
                lo=(2.0, -1.0, 0.0), hi=(4.0, 1.0, 4.0),
                mean=(2.5, 0.0, 2.0), variances=(9.0, 3.0, 3.0),
            ),
        )
    )


@dataclass(frozen=True)
class CostSpec:
    alpha2: float
    alpha3: float
    target: np.ndarray
    obstacles: ObstacleField = field(default_factory=ObstacleField)

    def __post_init__(self):
        if self.alpha2 < 0 or self.alpha3 < 0:
            raise ValueError("alpha2 and alpha3 must be nonnegative")
        tgt = np.asarray(self.target, dtype=float)
        tgt.setflags(write=False)
        object.__setattr__(self, "target", tgt)


def obstacle_Q(x, field: ObstacleField) -> float:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("x must be finite")
    return float(field.Q(x))


def running_cost(t, z, theta, spec: CostSpec):
    """||theta||^2 + alpha2 * Q(spatial part of z), batched over leading axes."""
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    val = np.sum(theta * theta, axis=-1)
    if spec.alpha2 > 0 and spec.obstacles.boxes:
        val = val + spec.alpha2 * spec.obstacles.Q(z[..., :3])
    return val if val.ndim else float(val)


def running_cost_grads(t, z, theta, spec: CostSpec):
    """(d/dz, d/dtheta) of running_cost, batched."""
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    dz = np.zeros_like(z)
    if spec.alpha2 > 0 and spec.obstacles.boxes:
        dz[..., :3] = spec.alpha2 * spec.obstacles.Q_grad(z[..., :3])
    return dz, 2.0 * theta


def terminal_cost(zT, spec: CostSpec):
    """(alpha3 / 2) * ||zT - target||^2 over the full state vector."""
    zT = np.asarray(zT, dtype=float)
    d = zT - spec.target
    val = 0.5 * spec.alpha3 * np.sum(d * d, axis=-1)
    return val if val.ndim else float(val)


def terminal_cost_grad(zT, spec: CostSpec):
    zT = np.asarray(zT, dtype=float)
    return spec.alpha3 * (zT - spec.target)


# ---------------------------------------------------------------------------
# Interaction energy evaluators
# ---------------------------------------------------------------------------

def interaction_direct(positions: np.ndarray, pairwise_kernel) -> float:
    """(1 / 2N^2) * sum over all ordered pairs of K(x_l, x_m).

    The diagonal self terms are included; the empirical double expectation
    keeps them, and the feature factorization is exact only with them in.
    ``pairwise_kernel(X, Y)`` must return the full kernel matrix.
    """
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    N = P.shape[0]
    K = pairwise_kernel(P, P)
    return float(np.sum(K) / (2.0 * N * N))


def mean_features(positions: np.ndarray, fmap: FeatureMap) -> np.ndarray:
    """c = (1/N) sum_l zeta(x_l)."""
    P = np.atleast_2d(np.asarray(positions, dtype=float))
    return fmap.features(P).mean(axis=0)


def interaction_features(positions: np.ndarray, fmap: FeatureMap) -> float:
    """(1/2) c^T Kr c with c the feature mean; O(N r + r^2)."""
    c = mean_features(positions, fmap)
    return float(0.5 * c @ fmap.kr_apply(c))
