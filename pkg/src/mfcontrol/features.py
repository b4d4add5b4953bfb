"""Gaussian interaction kernel and its low-rank feature expansions.

Two agents at spatial positions x, y interact through

    K(x, y) = alpha1 * exp(-||x - y||^2 / (2 * bandwidth^2)).

A feature map zeta: R^3 -> R^r with an SPD matrix Kr approximates the
kernel as zeta(x)^T Kr zeta(y), which lets population interaction energy
be evaluated from feature means in O(N r) instead of O(N^2) pairwise
terms. Two interchangeable backends produce the map: random Fourier
features (deterministic, closed form) and a small trained network fitted
to the kernel on a box. Both carry the sqrt(alpha1) output scaling so
that zeta(x)^T Kr zeta(y) targets K directly.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDiverged

RANDOM_FEATURE = "random_feature"
TRAINED_NETWORK = "trained_network"

# Training/validation sampling box for kernel fits, half width per axis.
DEFAULT_FIT_BOX = 3.0


def _require_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{what} must be finite")


@dataclass(frozen=True)
class KernelSpec:
    """Exact Gaussian interaction kernel parameters."""

    alpha1: float
    bandwidth: float = 1.0
    input_dim: int = 3

    def __post_init__(self):
        if not (self.alpha1 > 0):
            raise ValueError("alpha1 must be positive")
        if not (self.bandwidth > 0):
            raise ValueError("bandwidth must be positive")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Kernel matrix K[i, j] = K(X[i], Y[j]) for row-stacked points."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        sq = (
            np.sum(X * X, axis=1)[:, None]
            + np.sum(Y * Y, axis=1)[None, :]
            - 2.0 * (X @ Y.T)
        )
        np.maximum(sq, 0.0, out=sq)
        return self.alpha1 * np.exp(-sq / (2.0 * self.bandwidth**2))


def gaussian_kernel(x, y, spec: KernelSpec) -> float:
    """Evaluate K(x, y) = alpha1 * exp(-||x-y||^2 / (2 bandwidth^2))."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    _require_finite(x, "x")
    _require_finite(y, "y")
    d = x - y
    return float(spec.alpha1 * np.exp(-float(d @ d) / (2.0 * spec.bandwidth**2)))


@dataclass(frozen=True)
class FeatureMap:
    """Low-rank expansion zeta of the Gaussian kernel.

    ``parameters`` is the flat canonical packing of the backend weights:
    random_feature packs (frequencies W row-major, offsets b); a trained
    network packs (W1, b1, W2, b2) of the tanh hidden layer. Outputs are
    scaled by sqrt(alpha1). ``Kr`` of None means the identity.
    """

    kind: str
    r: int
    input_dim: int
    alpha1: float
    bandwidth: float
    seed: int
    parameters: np.ndarray
    Kr: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in (RANDOM_FEATURE, TRAINED_NETWORK):
            raise ValueError(f"unknown feature map kind {self.kind!r}")
        if self.r < 1:
            raise ValueError("rank r must be >= 1")
        p = np.asarray(self.parameters, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "parameters", p)
        if self.Kr is not None:
            K = np.asarray(self.Kr, dtype=float)
            if K.shape != (self.r, self.r):
                raise ValueError("Kr must be r x r")
            if not np.allclose(K, K.T):
                raise ValueError("Kr must be symmetric")
            K.setflags(write=False)
            object.__setattr__(self, "Kr", K)

    # -- parameter unpacking ------------------------------------------------

    @property
    def scale(self) -> float:
        return math.sqrt(self.alpha1)

    def _rff_parts(self):
        nw = self.r * self.input_dim
        W = self.parameters[:nw].reshape(self.r, self.input_dim)
        b = self.parameters[nw : nw + self.r]
        return W, b

    def _net_parts(self):
        r, din = self.r, self.input_dim
        H = (self.parameters.size - r) // (din + 1 + r)
        i = 0
        W1 = self.parameters[i : i + H * din].reshape(H, din)
        i += H * din
        b1 = self.parameters[i : i + H]
        i += H
        W2 = self.parameters[i : i + r * H].reshape(r, H)
        i += r * H
        b2 = self.parameters[i : i + r]
        return W1, b1, W2, b2

    @property
    def hidden_width(self) -> int:
        if self.kind != TRAINED_NETWORK:
            raise ValueError("hidden_width only defined for trained networks")
        return (self.parameters.size - self.r) // (self.input_dim + 1 + self.r)

    # -- evaluation ----------------------------------------------------------

    def features_unscaled(self, X: np.ndarray) -> np.ndarray:
        """zeta_tilde rows for row-stacked points X of shape (M, input_dim)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == RANDOM_FEATURE:
            W, b = self._rff_parts()
            return math.sqrt(2.0 / self.r) * np.cos(X @ W.T + b)
        W1, b1, W2, b2 = self._net_parts()
        return np.tanh(X @ W1.T + b1) @ W2.T + b2

    def features(self, X: np.ndarray) -> np.ndarray:
        """sqrt(alpha1)-scaled feature rows, shape (M, r)."""
        return self.scale * self.features_unscaled(X)

    def jacobians(self, X: np.ndarray) -> np.ndarray:
        """Per-point Jacobians of the scaled features, shape (M, r, input_dim)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.kind == RANDOM_FEATURE:
            W, b = self._rff_parts()
            S = -math.sqrt(2.0 / self.r) * np.sin(X @ W.T + b)  # (M, r)
            return self.scale * S[:, :, None] * W[None, :, :]
        W1, b1, W2, b2 = self._net_parts()
        T = np.tanh(X @ W1.T + b1)  # (M, H)
        D = 1.0 - T * T
        # d zeta / dx = W2 diag(1 - t^2) W1 per point
        return self.scale * np.einsum("rh,mh,hj->mrj", W2, D, W1)

    def feature_vjp(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        """Rows J_zeta(X[i])^T A[i] without materializing Jacobians.

        A has shape (M, r); result has shape (M, input_dim). Used for the
        state-gradient of a^T zeta(z) terms along whole trajectories.
        """
        X = np.atleast_2d(np.asarray(X, dtype=float))
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if self.kind == RANDOM_FEATURE:
            W, b = self._rff_parts()
            S = -math.sqrt(2.0 / self.r) * np.sin(X @ W.T + b)
            return self.scale * ((S * A) @ W)
        W1, b1, W2, b2 = self._net_parts()
        T = np.tanh(X @ W1.T + b1)
        return self.scale * (((1.0 - T * T) * (A @ W2)) @ W1)

    def kr_matrix(self) -> np.ndarray:
        return np.eye(self.r) if self.Kr is None else np.asarray(self.Kr)

    def kr_apply(self, V: np.ndarray) -> np.ndarray:
        """Kr @ V along the last axis (identity short-circuited)."""
        if self.Kr is None:
            return V
        return V @ self.Kr.T

    def pairwise(self, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
        """Expanded-kernel matrix zeta(X) Kr zeta(Y)^T."""
        ZX = self.features(X)
        ZY = self.features(Y)
        return ZX @ self.kr_apply(ZY).T


def evaluate_features(fmap: FeatureMap, x) -> np.ndarray:
    """zeta(x) = sqrt(alpha1) * zeta_tilde(x) for a single point."""
    x = np.asarray(x, dtype=float)
    _require_finite(x, "x")
    return fmap.features(x[None, :])[0]


def feature_jacobian(fmap: FeatureMap, x) -> np.ndarray:
    """Analytic Jacobian of evaluate_features at x, shape (r, input_dim)."""
    x = np.asarray(x, dtype=float)
    _require_finite(x, "x")
    return fmap.jacobians(x[None, :])[0]


def rff_features(spec: KernelSpec, r: int, seed: int) -> FeatureMap:
    """Random Fourier feature map for the Gaussian kernel.

    Draws r frequencies from N(0, I / bandwidth^2) and r phases uniform on
    [0, 2 pi); zeta_tilde_i(x) = sqrt(2/r) cos(w_i . x + b_i). Deterministic
    given (spec, r, seed).
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((r, spec.input_dim)) / spec.bandwidth
    b = rng.uniform(0.0, 2.0 * np.pi, size=r)
    params = np.concatenate([W.ravel(), b])
    return FeatureMap(
        kind=RANDOM_FEATURE,
        r=r,
        input_dim=spec.input_dim,
        alpha1=spec.alpha1,
        bandwidth=spec.bandwidth,
        seed=seed,
        parameters=params,
    )


# ---------------------------------------------------------------------------
# Trained feature network
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainingConfig:
    """Budget and hyperparameters for fitting the feature network.

    ``near_fraction`` of each batch pairs a sample with a Gaussian-nearby
    point instead of an independent one; uniform pairs in the box are almost
    always several kernel widths apart, which starves the fit exactly where
    the kernel is large.
    """

    hidden: int = 100
    r: int = 50
    num_samples: int = 10_000
    iterations: int = 3_000
    step_size: float = 1e-3
    decay_every: int = 10_000
    decay_factor: float = 0.1
    batch_size: int = 1024
    grad_penalty: float = 0.1
    box: float = DEFAULT_FIT_BOX
    validation_pairs: int = 2_000
    near_fraction: float = 0.5
    near_scale: float = 0.65

    def __post_init__(self):
        if self.hidden < 1 or self.r < 1 or self.num_samples < 2:
            raise ValueError("hidden, r and num_samples must be positive")
        if self.iterations < 0 or self.batch_size < 1:
            raise ValueError("iterations must be >= 0 and batch_size >= 1")
        if self.step_size <= 0 or self.decay_every < 1:
            raise ValueError("step_size must be > 0 and decay_every >= 1")
        if not (0.0 <= self.near_fraction <= 1.0) or self.near_scale <= 0:
            raise ValueError("invalid near-pair settings")


@dataclass(frozen=True)
class FitReport:
    """Training outcome and the choices that produced it."""

    validation_mse: float
    gradient_mse: float
    num_train_samples: int
    num_iterations: int
    seed: int
    hidden: int = 100
    grad_penalty: float = 0.1
    step_size: float = 1e-3
    decay_every: int = 10_000
    decay_factor: float = 0.1
    batch_size: int = 512
    activation: str = "tanh"
    final_train_loss: float = float("nan")

    def __post_init__(self):
        if self.validation_mse < 0 or self.gradient_mse < 0:
            raise ValueError("mse values must be nonnegative")


def _target_kernel(X, Y, bandwidth):
    d2 = np.sum((X - Y) ** 2, axis=1)
    return np.exp(-d2 / (2.0 * bandwidth**2))


def _target_kernel_grad_x(X, Y, bandwidth):
    k = _target_kernel(X, Y, bandwidth)
    return -(X - Y) / bandwidth**2 * k[:, None]


def _net_loss_and_grads(params, shapes, X, Y, k, gx, mu):
    """Batch loss and parameter gradients of the kernel-fit objective.

    Loss = mean((zx . zy - k)^2) + mu * mean(||J(x)^T zy - gx||^2), with the
    gradient-penalty backward pass written out by hand (it touches second
    derivatives of the tanh layer).
    """
    W1, b1, W2, b2 = _unpack(params, shapes)
    B = X.shape[0]

    TX = np.tanh(X @ W1.T + b1)
    TY = np.tanh(Y @ W1.T + b1)
    ZX = TX @ W2.T + b2
    ZY = TY @ W2.T + b2

    e = np.sum(ZX * ZY, axis=1) - k
    loss = float(np.mean(e * e))

    gZX = (2.0 / B) * e[:, None] * ZY
    gZY = (2.0 / B) * e[:, None] * ZX
    dW2 = gZX.T @ TX + gZY.T @ TY
    db2 = gZX.sum(axis=0) + gZY.sum(axis=0)
    dHX = (gZX @ W2) * (1.0 - TX * TX)
    dHY = (gZY @ W2) * (1.0 - TY * TY)
    dW1 = dHX.T @ X + dHY.T @ Y
    db1 = dHX.sum(axis=0) + dHY.sum(axis=0)

    if mu > 0.0:
        DX = 1.0 - TX * TX
        Q = ZY @ W2                      # rows W2^T zy
        Gpred = (DX * Q) @ W1            # rows J(x)^T zy
        gd = Gpred - gx
        loss += mu * float(np.mean(np.sum(gd * gd, axis=1)))
        A = (2.0 * mu / B) * gd          # d loss / d Gpred
        WA = A @ W1.T                    # rows W1 a
        dW1 += (DX * Q).T @ A
        dg = WA * Q * (-2.0 * TX * DX)   # through d(1 - tanh^2)/du
        dW1 += dg.T @ X
        db1 += dg.sum(axis=0)
        C = DX * WA                      # d loss / d Q rows
        dW2 += ZY.T @ C
        GY2 = C @ W2.T                   # d loss / d ZY
        dW2 += GY2.T @ TY
        db2 += GY2.sum(axis=0)
        dy2 = (GY2 @ W2) * (1.0 - TY * TY)
        dW1 += dy2.T @ Y
        db1 += dy2.sum(axis=0)

    return loss, _pack(dW1, db1, dW2, db2)


def _pack(W1, b1, W2, b2):
    return np.concatenate([W1.ravel(), b1, W2.ravel(), b2])


def _unpack(params, shapes):
    (H, din), r = shapes
    i = 0
    W1 = params[i : i + H * din].reshape(H, din)
    i += H * din
    b1 = params[i : i + H]
    i += H
    W2 = params[i : i + r * H].reshape(r, H)
    i += r * H
    b2 = params[i : i + r]
    return W1, b1, W2, b2


def fit_mlp_features(
    spec: KernelSpec, cfg: TrainingConfig, seed: int
) -> tuple[FeatureMap, FitReport]:
    """Fit a one-hidden-layer tanh network zeta_tilde to the unit kernel.

    Minimizes the sample MSE between zeta_tilde(x) . zeta_tilde(y) and
    exp(-||x-y||^2 / (2 bandwidth^2)) over point pairs drawn uniformly from
    [-box, box]^3, plus a penalty on the mismatch of the kernel x-gradient.
    Optimized with Adam (moments 0.9/0.999, eps 1e-8) and a stepwise decayed
    learning rate. The returned map carries the sqrt(alpha1) scaling; the
    report's validation errors are for the unscaled kernel fit.
    """
    rng = np.random.default_rng(seed)
    din = spec.input_dim
    H, r = cfg.hidden, cfg.r
    shapes = ((H, din), r)

    points = rng.uniform(-cfg.box, cfg.box, size=(cfg.num_samples, din))
    W1 = rng.normal(0.0, 1.0 / math.sqrt(din), size=(H, din))
    b1 = np.zeros(H)
    W2 = rng.normal(0.0, 1.0 / math.sqrt(H), size=(r, H))
    b2 = np.zeros(r)
    params = _pack(W1, b1, W2, b2)

    m = np.zeros_like(params)
    v = np.zeros_like(params)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    loss = float("nan")

    n_near = int(round(cfg.near_fraction * cfg.batch_size))
    for it in range(cfg.iterations):
        i = rng.integers(0, cfg.num_samples, size=cfg.batch_size)
        j = rng.integers(0, cfg.num_samples, size=cfg.batch_size)
        X, Y = points[i], points[j].copy()
        if n_near:
            jitter = rng.normal(0.0, cfg.near_scale, size=(n_near, din))
            Y[:n_near] = np.clip(X[:n_near] + jitter, -cfg.box, cfg.box)
        k = _target_kernel(X, Y, spec.bandwidth)
        gx = _target_kernel_grad_x(X, Y, spec.bandwidth)
        loss, grad = _net_loss_and_grads(
            params, shapes, X, Y, k, gx, cfg.grad_penalty
        )
        if not np.isfinite(loss):
            raise TrainingDiverged(f"training loss became {loss} at iteration {it}")
        lr = cfg.step_size * cfg.decay_factor ** (it // cfg.decay_every)
        t = it + 1
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        mhat = m / (1.0 - beta1**t)
        vhat = v / (1.0 - beta2**t)
        params = params - lr * mhat / (np.sqrt(vhat) + eps)

    fmap = FeatureMap(
        kind=TRAINED_NETWORK,
        r=r,
        input_dim=din,
        alpha1=spec.alpha1,
        bandwidth=spec.bandwidth,
        seed=seed,
        parameters=params,
    )

    vrng = np.random.default_rng(seed + 1)
    VX = vrng.uniform(-cfg.box, cfg.box, size=(cfg.validation_pairs, din))
    VY = vrng.uniform(-cfg.box, cfg.box, size=(cfg.validation_pairs, din))
    kv = _target_kernel(VX, VY, spec.bandwidth)
    ZX = fmap.features_unscaled(VX)
    ZY = fmap.features_unscaled(VY)
    val_mse = float(np.mean((np.sum(ZX * ZY, axis=1) - kv) ** 2))
    gv = _target_kernel_grad_x(VX, VY, spec.bandwidth)
    gpred = fmap.feature_vjp(VX, ZY) / fmap.scale
    grad_mse = float(np.mean(np.sum((gpred - gv) ** 2, axis=1)))

    report = FitReport(
        validation_mse=val_mse,
        gradient_mse=grad_mse,
        num_train_samples=cfg.num_samples,
        num_iterations=cfg.iterations,
        seed=seed,
        hidden=H,
        grad_penalty=cfg.grad_penalty,
        step_size=cfg.step_size,
        decay_every=cfg.decay_every,
        decay_factor=cfg.decay_factor,
        batch_size=cfg.batch_size,
        final_train_loss=loss,
    )
    return fmap, report


def validate_kernel_fit(
    fmap: FeatureMap,
    spec: KernelSpec,
    num_pairs: int,
    seed: int,
    box: float = DEFAULT_FIT_BOX,
) -> float:
    """Sample MSE between zeta(x)^T Kr zeta(y) and K(x, y) on uniform pairs."""
    if num_pairs < 1:
        raise ValueError("num_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    X = rng.uniform(-box, box, size=(num_pairs, spec.input_dim))
    Y = rng.uniform(-box, box, size=(num_pairs, spec.input_dim))
    ZX = fmap.features(X)
    ZY = fmap.kr_apply(fmap.features(Y))
    approx = np.sum(ZX * ZY, axis=1)
    exact = spec.alpha1 * _target_kernel(X, Y, spec.bandwidth)
    return float(np.mean((approx - exact) ** 2))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def featuremap_to_json(fmap: FeatureMap) -> str:
    """Value-exact JSON document for a feature map."""
    doc = {
        "kind": fmap.kind,
        "r": fmap.r,
        "input_dim": fmap.input_dim,
        "alpha1": fmap.alpha1,
        "bandwidth": fmap.bandwidth,
        "seed": fmap.seed,
        "parameters": [float(p) for p in fmap.parameters],
        "Kr": "identity" if fmap.Kr is None else [[float(v) for v in row] for row in fmap.Kr],
    }
    return json.dumps(doc, sort_keys=True)


def featuremap_from_json(text: str) -> FeatureMap:
    doc = json.loads(text)
    Kr = None if doc["Kr"] == "identity" else np.asarray(doc["Kr"], dtype=float)
    return FeatureMap(
        kind=doc["kind"],
        r=int(doc["r"]),
        input_dim=int(doc["input_dim"]),
        alpha1=float(doc["alpha1"]),
        bandwidth=float(doc["bandwidth"]),
        seed=int(doc["seed"]),
        parameters=np.asarray(doc["parameters"], dtype=float),
        Kr=Kr,
    )


def featuremap_fingerprint(fmap: FeatureMap) -> str:
    return hashlib.sha256(featuremap_to_json(fmap).encode()).hexdigest()
