"""Discretized saddle-point objective for the decoupled swarm problem.

On a uniform grid the population Lagrangian splits into per-agent terms

    L_l(a, th_l) = (h/2) sum_k a_k^T Kr^-1 a_k
                   - h sum_k [ rc(t_k, z_k, th_k) + a_k^T zeta(z_k) ]
                   - G(z_n),

with z the Euler rollout of agent l. The primal step maximizes L_l over
th_l, equivalently minimizes

    Phi_l(th_l; a) = h sum_k [ rc + a_k^T zeta(z_k) ] + G(z_n),

since the dual quadratic is constant in th. The feature-expanded swarm
objective J_r replaces the pairwise interaction with (1/2) c_k^T Kr c_k of
the feature means c_k. This module provides values and adjoint gradients
for all three, plus the three stopping criteria.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import costs as costs_mod
from .costs import CostSpec
from .dynamics import (
    ControlSchedule,
    DynamicsModel,
    Rollout,
    TimeGrid,
    adjoint_sweep,
    euler_rollout,
)
from .features import FeatureMap, KernelSpec, featuremap_fingerprint


@dataclass(frozen=True)
class InitialDistribution:
    """Isotropic Gaussian over a subset of state coordinates.

    ``active_dims`` of None randomizes every coordinate; the quadrotor setup
    randomizes only the three spatial coordinates and pins angles and
    velocities to the mean (zero).
    """

    mean: np.ndarray
    variance: float
    seed: int = 0
    active_dims: tuple[int, ...] | None = None

    def __post_init__(self):
        mu = np.asarray(self.mean, dtype=float)
        mu.setflags(write=False)
        object.__setattr__(self, "mean", mu)
        if self.variance < 0:
            raise ValueError("variance must be nonnegative")


def grid_fingerprint(grid: TimeGrid) -> str:
    doc = json.dumps({"T": repr(float(grid.T)), "n": int(grid.n)}, sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def sample_initial_conditions(
    init: InitialDistribution, N: int, seed: int | None = None
) -> np.ndarray:
    """Draw N initial states from the isotropic Gaussian, shape (N, d)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    rng = np.random.default_rng(init.seed if seed is None else seed)
    d = init.mean.shape[0]
    Z0 = np.tile(init.mean, (N, 1))
    if init.variance > 0:
        dims = range(d) if init.active_dims is None else init.active_dims
        dims = np.asarray(list(dims), dtype=int)
        Z0[:, dims] += np.sqrt(init.variance) * rng.standard_normal((N, dims.size))
    return Z0


@dataclass(frozen=True)
class ProblemSpec:
    """Everything that defines one swarm-control problem instance."""

    model: DynamicsModel
    grid: TimeGrid
    kernel: KernelSpec
    fmap: FeatureMap
    costs: CostSpec
    init: InitialDistribution
    N: int

    def __post_init__(self):
        d = self.model.state_dim
        if self.N < 1:
            raise ValueError("need at least one agent")
        if self.costs.target.shape != (d,):
            raise ValueError("target dimension does not match the model")
        if self.init.mean.shape != (d,):
            raise ValueError("initial mean dimension does not match the model")
        if self.fmap.input_dim != 3:
            raise ValueError("feature maps act on the 3 spatial coordinates")


@dataclass(frozen=True)
class DualCoefficients:
    """Global interaction coefficients, one r-vector per grid node."""

    values: np.ndarray
    grid_fingerprint: str = ""
    map_fingerprint: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("dual coefficients must have shape (n, r)")
        if not np.all(np.isfinite(v)):
            raise ValueError("dual coefficients must be finite")
        object.__setattr__(self, "values", v)


def make_dual(values: np.ndarray, spec: ProblemSpec) -> DualCoefficients:
    return DualCoefficients(
        values=values,
        grid_fingerprint=grid_fingerprint(spec.grid),
        map_fingerprint=featuremap_fingerprint(spec.fmap),
    )


@dataclass
class HistoryRecord:
    iteration: int
    primal_grad_norm: float
    dual_residual_max: float
    jr_grad_norm: float
    jr_value: float
    wall_clock_s: float


@dataclass
class SolveHistory:
    records: list[HistoryRecord] = field(default_factory=list)

    def append(self, **kw):
        self.records.append(HistoryRecord(**kw))

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(rec, name) for rec in self.records])

    def __len__(self):
        return len(self.records)


# ---------------------------------------------------------------------------
# Value / gradient engines (batched over agents)
# ---------------------------------------------------------------------------

def _dual_quadratic(a_values: np.ndarray, fmap: FeatureMap, h: float) -> float:
    """(h/2) sum_k a_k^T Kr^-1 a_k."""
    if fmap.Kr is None:
        return 0.5 * h * float(np.sum(a_values * a_values))
    cf = cho_factor(fmap.kr_matrix())
    sol = cho_solve(cf, a_values.T)
    return 0.5 * h * float(np.sum(a_values.T * sol))


def _node_features(fmap: FeatureMap, Z: np.ndarray) -> np.ndarray:
    """zeta of every (agent, node) state's spatial part, shape (N, n, r)."""
    N, n, _ = Z.shape
    return fmap.features(Z[:, :, :3].reshape(N * n, 3)).reshape(N, n, fmap.r)


def phi_value_batch(
    a_values: np.ndarray, TH: np.ndarray, Z: np.ndarray, spec: ProblemSpec
) -> np.ndarray:
    """Phi_l for each agent given a precomputed rollout, shape (N,)."""
    h = spec.grid.h
    feats = _node_features(spec.fmap, Z)
    rc = costs_mod.running_cost(None, Z, TH, spec.costs)  # (N, n)
    inter = np.einsum("lnr,nr->ln", feats, a_values)
    G = costs_mod.terminal_cost(Z[:, -1], spec.costs)
    return h * np.sum(rc + inter, axis=1) + G


def phi_value_and_grad(
    a_values: np.ndarray,
    TH: np.ndarray,
    z0: np.ndarray,
    spec: ProblemSpec,
    safe: bool = False,
):
    """Values and adjoint gradients of Phi_l for a batch of agents.

    TH has shape (B, n, q), z0 has shape (B, d). Returns ((B,), (B, n, q)).
    In safe mode diverged agents get value +inf and zero gradient instead of
    raising, so line searches can back off.
    """
    ctx = np.errstate(all="ignore") if safe else np.errstate()
    with ctx:
        roll = euler_rollout(spec.model, z0, ControlSchedule(TH), spec.grid, check=not safe)
        Z = roll.states
        B, n, _ = TH.shape
        h = spec.grid.h
        feats = _node_features(spec.fmap, Z)
        rc = costs_mod.running_cost(None, Z, TH, spec.costs)
        inter = np.einsum("lnr,nr->ln", feats, a_values)
        G = costs_mod.terminal_cost(Z[:, -1], spec.costs)
        values = h * np.sum(rc + inter, axis=1) + G

        rc_z, rc_th = costs_mod.running_cost_grads(None, Z, TH, spec.costs)
        A = np.broadcast_to(a_values, (B, n, spec.fmap.r)).reshape(B * n, -1)
        vjp = spec.fmap.feature_vjp(Z[:, :, :3].reshape(B * n, 3), A).reshape(B, n, 3)
        rc_z[:, :, :3] += vjp
        gterm = costs_mod.terminal_cost_grad(Z[:, -1], spec.costs)
        grads = adjoint_sweep(spec.model, Z, TH, spec.grid, rc_z, rc_th, gterm)
    if safe:
        ok = np.isfinite(values) & np.all(np.isfinite(grads.reshape(B, -1)), axis=1)
        values = np.where(ok, values, np.inf)
        grads[~ok] = 0.0
    return values, grads


def per_agent_objective(
    a: DualCoefficients, theta_l: np.ndarray, z0_l: np.ndarray, spec: ProblemSpec
) -> float:
    """L_l(a, th_l): dual quadratic minus cost and interaction terms."""
    theta_l = np.asarray(theta_l, dtype=float)
    roll = euler_rollout(
        spec.model, np.asarray(z0_l, dtype=float)[None], ControlSchedule(theta_l[None]), spec.grid
    )
    phi = phi_value_batch(a.values, theta_l[None], roll.states, spec)[0]
    return _dual_quadratic(a.values, spec.fmap, spec.grid.h) - float(phi)


def _default_z0(spec: ProblemSpec, z0) -> np.ndarray:
    if z0 is None:
        return sample_initial_conditions(spec.init, spec.N)
    return np.atleast_2d(np.asarray(z0, dtype=float))


def full_lagrangian(
    a: DualCoefficients, theta: ControlSchedule, spec: ProblemSpec, z0=None
) -> float:
    """L(a, th) = (1/N) sum_l L_l(a, th_l)."""
    z0 = _default_z0(spec, z0)
    roll = euler_rollout(spec.model, z0, theta, spec.grid)
    phi = phi_value_batch(a.values, theta.values, roll.states, spec)
    return _dual_quadratic(a.values, spec.fmap, spec.grid.h) - float(np.mean(phi))


def lagrangian_theta_gradient(
    a: DualCoefficients, theta: ControlSchedule, spec: ProblemSpec, z0=None
) -> np.ndarray:
    """Gradient of the full Lagrangian w.r.t. all controls, shape (N, n, q)."""
    z0 = _default_z0(spec, z0)
    _, grads = phi_value_and_grad(a.values, theta.values, z0, spec)
    return -grads / spec.N


# ---------------------------------------------------------------------------
# Feature-expanded swarm objective J_r
# ---------------------------------------------------------------------------

def jr_value_and_grad(
    TH: np.ndarray,
    z0: np.ndarray,
    spec: ProblemSpec,
    exact_kernel: bool = False,
    safe: bool = False,
):
    """Value and adjoint gradient of J_r over all controls at once.

    J_r = h * mean_l sum_k rc + h * sum_k interaction_k + mean_l G, with the
    interaction either (1/2) c_k^T Kr c_k of the feature means or the exact
    Gaussian pairwise sum. Returns (float, (N, n, q)).
    """
    N = spec.N
    B, n, _ = TH.shape
    h = spec.grid.h
    ctx = np.errstate(all="ignore") if safe else np.errstate()
    with ctx:
        roll = euler_rollout(spec.model, z0, ControlSchedule(TH), spec.grid, check=not safe)
        Z = roll.states
        rc = costs_mod.running_cost(None, Z, TH, spec.costs)
        G = costs_mod.terminal_cost(Z[:, -1], spec.costs)
        rc_z, rc_th = costs_mod.running_cost_grads(None, Z, TH, spec.costs)
        rc_z /= N
        rc_th /= N
        if exact_kernel:
            bw2 = spec.kernel.bandwidth**2
            inter = 0.0
            for k in range(n):
                P = Z[:, k, :3]
                K = spec.kernel.pairwise(P, P)
                inter += np.sum(K) / (2.0 * N * N)
                diff = P[:, None, :] - P[None, :, :]
                rc_z[:, k, :3] -= np.einsum("lm,lmj->lj", K, diff) / (bw2 * N * N)
        else:
            feats = _node_features(spec.fmap, Z)
            c = feats.mean(axis=0)  # (n, r)
            ckr = spec.fmap.kr_apply(c)
            inter = 0.5 * np.sum(c * ckr)
            A = np.broadcast_to(ckr, (B, n, spec.fmap.r)).reshape(B * n, -1)
            vjp = spec.fmap.feature_vjp(Z[:, :, :3].reshape(B * n, 3), A).reshape(B, n, 3)
            rc_z[:, :, :3] += vjp / N
        gterm = costs_mod.terminal_cost_grad(Z[:, -1], spec.costs) / N
        grads = adjoint_sweep(spec.model, Z, TH, spec.grid, rc_z, rc_th, gterm)
        value = h * np.mean(np.sum(rc, axis=1)) + h * inter + np.mean(G)
    if safe and not (np.isfinite(value) and np.all(np.isfinite(grads))):
        return np.inf, np.zeros_like(grads)
    return float(value), grads


def objective_Jr(
    theta: ControlSchedule, spec: ProblemSpec, z0=None, exact_kernel: bool = False
) -> float:
    """J_r(th): mean running cost + interaction energy + mean terminal cost.

    With ``exact_kernel`` the interaction uses the exact Gaussian pairwise
    sum instead of the feature factorization (O(N^2) per node).
    """
    z0 = _default_z0(spec, z0)
    h = spec.grid.h
    roll = euler_rollout(spec.model, z0, theta, spec.grid)
    Z = roll.states
    rc = costs_mod.running_cost(None, Z, theta.values, spec.costs)
    G = costs_mod.terminal_cost(Z[:, -1], spec.costs)
    if exact_kernel:
        inter = sum(
            costs_mod.interaction_direct(Z[:, k, :3], spec.kernel.pairwise)
            for k in range(spec.grid.n)
        )
    else:
        c = _node_features(spec.fmap, Z).mean(axis=0)
        inter = 0.5 * float(np.sum(c * spec.fmap.kr_apply(c)))
    return h * float(np.mean(np.sum(rc, axis=1))) + h * float(inter) + float(np.mean(G))


def objective_Jr_gradient(
    theta: ControlSchedule, spec: ProblemSpec, z0=None, exact_kernel: bool = False
) -> np.ndarray:
    """Adjoint gradient of J_r w.r.t. every control entry, shape (N, n, q)."""
    z0 = _default_z0(spec, z0)
    _, grads = jr_value_and_grad(theta.values, z0, spec, exact_kernel=exact_kernel)
    return grads


# ---------------------------------------------------------------------------
# Stopping criteria
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StoppingReport:
    primal_ok: bool
    dual_ok: bool
    mfc_ok: bool
    primal_grad_norm: float
    dual_residual_max: float
    jr_grad_norm: float
    jr_value: float

    @property
    def all_ok(self) -> bool:
        return self.primal_ok and self.dual_ok and self.mfc_ok


def dual_residuals(a_values: np.ndarray, rollout: Rollout, fmap: FeatureMap) -> np.ndarray:
    """Per-node ||a_k - mean zeta(z(t_k))||, shape (n,)."""
    feats = _node_features(fmap, rollout.states)
    c = feats.mean(axis=0)
    return np.linalg.norm(a_values - c, axis=1)


def stopping_check(
    theta: ControlSchedule,
    a: DualCoefficients,
    spec: ProblemSpec,
    eps: float,
    z0=None,
    rollout: Rollout | None = None,
) -> StoppingReport:
    """Evaluate the three stopping criteria at tolerance eps.

    primal: stacked Euclidean norm of the Lagrangian's control gradient;
    dual: max over nodes of ||a_k - c_k||; mfc: norm of grad J_r.
    """
    z0 = _default_z0(spec, z0)
    if rollout is None:
        rollout = euler_rollout(spec.model, z0, theta, spec.grid)
    grad_L = lagrangian_theta_gradient(a, theta, spec, z0)
    primal_norm = float(np.linalg.norm(grad_L))
    dual_max = float(np.max(dual_residuals(a.values, rollout, spec.fmap)))
    jr_val, jr_grad = jr_value_and_grad(theta.values, z0, spec)
    jr_norm = float(np.linalg.norm(jr_grad))
    return StoppingReport(
        primal_ok=primal_norm <= eps,
        dual_ok=dual_max < eps,
        mfc_ok=jr_norm < eps,
        primal_grad_norm=primal_norm,
        dual_residual_max=dual_max,
        jr_grad_norm=jr_norm,
        jr_value=jr_val,
    )
