"""Agent dynamics, Euler rollout, and adjoint rollout gradients.

Two models: a 3-D double integrator (state (pos, vel) in R^6, acceleration
controls in R^3) and a quadrotor (state (pos, angles, vel, angular vel) in
R^12, controls (thrust, three torques) in R^4). All operations are written
batched over agents; scalars in, scalars out still works through
broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RolloutDiverged

DOUBLE_INTEGRATOR = "double_integrator"
QUADROTOR = "quadrotor"

_DIMS = {DOUBLE_INTEGRATOR: (6, 3), QUADROTOR: (12, 4)}


@dataclass(frozen=True)
class DynamicsModel:
    kind: str
    mass: float = 1.0
    gravity: float = 9.81

    def __post_init__(self):
        if self.kind not in _DIMS:
            raise ValueError(f"unknown dynamics kind {self.kind!r}")
        if self.mass <= 0 or self.gravity <= 0:
            raise ValueError("mass and gravity must be positive")

    @property
    def state_dim(self) -> int:
        return _DIMS[self.kind][0]

    @property
    def control_dim(self) -> int:
        return _DIMS[self.kind][1]


@dataclass(frozen=True)
class TimeGrid:
    """Uniform nodes t_1 = 0 < ... < t_n = T with step h = T / (n - 1)."""

    T: float
    n: int

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two grid nodes")
        if self.T <= 0:
            raise ValueError("horizon must be positive")

    @property
    def h(self) -> float:
        return self.T / (self.n - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.n)


@dataclass(frozen=True)
class ControlSchedule:
    """Per-agent, per-node controls, shape (N, n, q)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3:
            raise ValueError("controls must have shape (N, n, q)")
        if not np.all(np.isfinite(v)):
            raise ValueError("controls must be finite")
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class Rollout:
    """States z of shape (N, n, d) plus the controls that produced them."""

    states: np.ndarray
    controls_used: ControlSchedule


def _di_rhs(t, z, theta) -> np.ndarray:
    return np.concatenate([z[..., 3:6], theta], axis=-1)


def _quad_rhs(t, z, theta, model: DynamicsModel) -> np.ndarray:
    psi, th, phi = z[..., 3], z[..., 4], z[..., 5]
    u = theta[..., 0] / model.mass
    sps, cps = np.sin(psi), np.cos(psi)
    sth, cth = np.sin(th), np.cos(th)
    sph, cph = np.sin(phi), np.cos(phi)
    out = np.empty_like(z)
    out[..., 0:6] = z[..., 6:12]
    out[..., 6] = u * (sph * sps + cph * cps * sth)
    out[..., 7] = u * (-cps * sph + cph * sth * sps)
    out[..., 8] = u * cth * cph - model.gravity
    out[..., 9:12] = theta[..., 1:4]
    return out


def _check_finite_pair(z, theta):
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(theta))):
        raise ValueError("state and control must be finite")


def double_integrator_rhs(t, z, theta) -> np.ndarray:
    """(vx, vy, vz, ax, ay, az) with the acceleration equal to the control."""
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _check_finite_pair(z, theta)
    return _di_rhs(t, z, theta)


def quadrotor_rhs(t, z, theta, model: DynamicsModel) -> np.ndarray:
    """Quadrotor dynamics with thrust along the body's down axis.

    State order (x, y, z, psi, th, phi, vx, vy, vz, vpsi, vth, vphi);
    controls (u, tau_psi, tau_th, tau_phi).
    """
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    _check_finite_pair(z, theta)
    return _quad_rhs(t, z, theta, model)


def model_rhs(model: DynamicsModel, t, z, theta) -> np.ndarray:
    if model.kind == DOUBLE_INTEGRATOR:
        return _di_rhs(t, np.asarray(z, dtype=float), np.asarray(theta, dtype=float))
    return _quad_rhs(t, np.asarray(z, dtype=float), np.asarray(theta, dtype=float), model)


def model_rhs_vjp(model: DynamicsModel, t, z, theta, lam):
    """(df/dz)^T lam and (df/dtheta)^T lam, batched over leading axes."""
    z = np.asarray(z, dtype=float)
    theta = np.asarray(theta, dtype=float)
    lam = np.asarray(lam, dtype=float)
    vz = np.zeros_like(z)
    vth = np.zeros_like(theta)
    if model.kind == DOUBLE_INTEGRATOR:
        vz[..., 3:6] = lam[..., 0:3]
        vth[...] = lam[..., 3:6]
        return vz, vth

    psi, th, phi = z[..., 3], z[..., 4], z[..., 5]
    u = theta[..., 0] / model.mass
    sps, cps = np.sin(psi), np.cos(psi)
    sth, cth = np.sin(th), np.cos(th)
    sph, cph = np.sin(phi), np.cos(phi)
    lvx, lvy, lvz = lam[..., 6], lam[..., 7], lam[..., 8]
    # velocity rows feed position/angle costates
    vz[..., 6:12] = lam[..., 0:6]
    # acceleration rows depend on the three angles and the thrust
    vz[..., 3] += u * ((sph * cps - cph * sps * sth) * lvx
                       + (sps * sph + cph * sth * cps) * lvy)
    vz[..., 4] += u * (cph * cps * cth * lvx + cph * cth * sps * lvy
                       - sth * cph * lvz)
    vz[..., 5] += u * ((cph * sps - sph * cps * sth) * lvx
                       + (-cps * cph - sph * sth * sps) * lvy
                       - cth * sph * lvz)
    vth[..., 0] = ((sph * sps + cph * cps * sth) * lvx
                   + (-cps * sph + cph * sth * sps) * lvy
                   + cth * cph * lvz) / model.mass
    vth[..., 1:4] = lam[..., 9:12]
    return vz, vth


def euler_rollout(
    model: DynamicsModel,
    z0: np.ndarray,
    theta: ControlSchedule,
    grid: TimeGrid,
    check: bool = True,
) -> Rollout:
    """Explicit Euler trajectories for all agents.

    z[l, k+1] = z[l, k] + h * f(t_k, z[l, k], theta[l, k]); the control at
    the final node never enters the recursion (it only appears in running
    costs). With ``check`` a NaN/Inf state raises RolloutDiverged naming the
    agent and step; line-search trial evaluations disable it and deal with
    non-finite values themselves.
    """
    z0 = np.atleast_2d(np.asarray(z0, dtype=float))
    th = theta.values
    N, n, q = th.shape
    d = model.state_dim
    if z0.shape != (N, d) or q != model.control_dim or n != grid.n:
        raise ValueError("inconsistent shapes for rollout")
    Z = np.empty((N, n, d))
    Z[:, 0] = z0
    t = grid.nodes
    h = grid.h
    for k in range(n - 1):
        Z[:, k + 1] = Z[:, k] + h * model_rhs(model, t[k], Z[:, k], th[:, k])
        if check:
            bad = ~np.all(np.isfinite(Z[:, k + 1]), axis=1)
            if np.any(bad):
                raise RolloutDiverged(int(np.argmax(bad)), k + 1)
    return Rollout(states=Z, controls_used=theta)


def adjoint_sweep(
    model: DynamicsModel,
    Z: np.ndarray,
    TH: np.ndarray,
    grid: TimeGrid,
    rc_z: np.ndarray,
    rc_th: np.ndarray,
    gterm: np.ndarray,
) -> np.ndarray:
    """Gradient of h * sum_k rc(t_k, z_k, th_k) + G(z_n) w.r.t. controls.

    rc_z, rc_th hold per-node running-cost partials (shape like Z, TH);
    gterm holds the terminal-cost gradient (N, d). Backward costate sweep
    through the Euler recursion; returns (N, n, q).
    """
    N, n, q = TH.shape
    h = grid.h
    t = grid.nodes
    G = np.empty_like(TH)
    lam = gterm + h * rc_z[:, n - 1]
    G[:, n - 1] = h * rc_th[:, n - 1]
    for k in range(n - 2, -1, -1):
        vz, vth = model_rhs_vjp(model, t[k], Z[:, k], TH[:, k], lam)
        G[:, k] = h * rc_th[:, k] + h * vth
        lam = lam + h * vz + h * rc_z[:, k]
    return G


def rollout_gradient(
    model: DynamicsModel,
    z0: np.ndarray,
    theta: np.ndarray,
    grid: TimeGrid,
    running_cost_grad,
    terminal_cost_grad,
) -> np.ndarray:
    """Adjoint gradient of one agent's discretized objective.

    running_cost_grad(k, t, z, theta) returns (d cost/d z, d cost/d theta)
    for node k; terminal_cost_grad(zT) returns the terminal gradient. The
    objective is h * sum over all n nodes plus the terminal term.
    """
    theta = np.asarray(theta, dtype=float)
    n, q = theta.shape
    if q != model.control_dim or n != grid.n:
        raise ValueError("theta must have shape (n, control_dim)")
    roll = euler_rollout(model, np.asarray(z0)[None, :], ControlSchedule(theta[None]), grid)
    Z = roll.states
    t = grid.nodes
    rc_z = np.zeros_like(Z)
    rc_th = np.zeros((1, n, q))
    for k in range(n):
        dz, dth = running_cost_grad(k, t[k], Z[0, k], theta[k])
        rc_z[0, k] = dz
        rc_th[0, k] = dth
    gterm = np.asarray(terminal_cost_grad(Z[0, n - 1]), dtype=float)[None, :]
    return adjoint_sweep(model, Z, theta[None], grid, rc_z, rc_th, gterm)[0]
