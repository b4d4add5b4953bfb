"""Run configuration: one TOML document per experiment.

The parser is strict: unknown keys are rejected, values are type checked,
and the parsed configuration serializes back to a canonical dictionary
with every default filled in, which is what gets hashed into artifacts.
Dotted-key overrides from the command line are applied to the raw document
before parsing, so they face the same checks.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import InitialDistribution, ProblemSpec
from .costs import CostSpec, ObstacleBox, ObstacleField, default_obstacles
from .dynamics import DOUBLE_INTEGRATOR, QUADROTOR, DynamicsModel, TimeGrid
from .features import (
    RANDOM_FEATURE,
    TRAINED_NETWORK,
    FeatureMap,
    KernelSpec,
    TrainingConfig,
    fit_mlp_features,
    rff_features,
)
from .solvers import GRADIENT_DESCENT, LBFGS, OptimizerOptions, PrimalDualOptions


class ConfigError(ValueError):
    pass


def _check_keys(section: dict, allowed, where: str):
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {sorted(unknown)}")


def _num(section, key, default, where, low=None):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number")
    v = float(v)
    if low is not None and v < low:
        raise ConfigError(f"{where}.{key} must be >= {low}")
    return v


def _int(section, key, default, where, low=None):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{key} must be an integer")
    if low is not None and v < low:
        raise ConfigError(f"{where}.{key} must be >= {low}")
    return v


def _str(section, key, default, where, choices=None):
    v = section.get(key, default)
    if not isinstance(v, str):
        raise ConfigError(f"{where}.{key} must be a string")
    if choices and v not in choices:
        raise ConfigError(f"{where}.{key} must be one of {sorted(choices)}")
    return v


def _vector(section, key, default, where):
    v = section.get(key, default)
    if not isinstance(v, list) or not all(
        isinstance(x, (int, float)) and not isinstance(x, bool) for x in v
    ):
        raise ConfigError(f"{where}.{key} must be a list of numbers")
    return [float(x) for x in v]


@dataclass
class FeatureConfig:
    backend: str = RANDOM_FEATURE
    r: int = 50
    seed: int = 7
    load_from: str = ""
    training: TrainingConfig = field(default_factory=TrainingConfig)


@dataclass
class SolverConfig:
    gamma: float | None = None
    eps_tol: float = 0.5
    max_outer_iters: int = 60
    seed: int = 3
    workers: int = 1
    stop_on: str = "all"
    obstacle_ramp_iters: int = 0
    obstacle_ramp_factor: float = 1e-4
    slide_rounds: int = 0
    adapt_gamma: bool = True
    phases: tuple[OptimizerOptions, ...] = (
        OptimizerOptions(method=LBFGS, max_iters=250, grad_tol=1e-3),
        OptimizerOptions(method=GRADIENT_DESCENT, max_iters=750, grad_tol=1e-3, step_size=1e-4),
    )


@dataclass
class BenchConfig:
    sizes: tuple[int, ...] = (500, 1000, 2000, 4000)
    repetitions: int = 3
    seed: int = 5
    reuse_source_agents: tuple[int, ...] = (50, 100)
    reuse_eval_agents: int = 200
    reuse_eval_seed: int = 404
    race_runs: int = 3
    race_grad_tol: float = 0.5
    race_exact_kernel: bool = False
    race_coupled_max_iters: int = 15_000
    race_coupled_memory: int = 30


@dataclass
class RunConfig:
    model: DynamicsModel = field(default_factory=lambda: DynamicsModel(DOUBLE_INTEGRATOR))
    grid: TimeGrid = field(default_factory=lambda: TimeGrid(T=5.0, n=50))
    kernel: KernelSpec = field(default_factory=lambda: KernelSpec(alpha1=2e5))
    features: FeatureConfig = field(default_factory=FeatureConfig)
    costs: CostSpec = field(
        default_factory=lambda: CostSpec(
            alpha2=1e7,
            alpha3=1e4,
            target=np.array([0.0, 0.0, 7.0, 0.0, 0.0, 0.0]),
            obstacles=default_obstacles(),
        )
    )
    init: InitialDistribution = field(
        default_factory=lambda: InitialDistribution(
            mean=np.array([0.0, -0.5, 0.0, 0.0, 0.0, 0.0]), variance=0.8, seed=11
        )
    )
    agents: int = 100
    solver: SolverConfig = field(default_factory=SolverConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)

    def canonical(self) -> dict:
        """Every field, defaults included, as plain JSON-compatible data."""
        fc = self.features
        tr = fc.training
        return {
            "model": {"kind": self.model.kind, "mass": self.model.mass,
                      "gravity": self.model.gravity},
            "grid": {"horizon": self.grid.T, "nodes": self.grid.n},
            "kernel": {"alpha1": self.kernel.alpha1, "bandwidth": self.kernel.bandwidth},
            "features": {
                "backend": fc.backend, "r": fc.r, "seed": fc.seed,
                "load_from": fc.load_from,
                "hidden": tr.hidden, "num_samples": tr.num_samples,
                "iterations": tr.iterations, "step_size": tr.step_size,
                "decay_every": tr.decay_every, "decay_factor": tr.decay_factor,
                "batch_size": tr.batch_size, "grad_penalty": tr.grad_penalty,
                "box": tr.box, "validation_pairs": tr.validation_pairs,
                "near_fraction": tr.near_fraction, "near_scale": tr.near_scale,
            },
            "costs": {
                "alpha2": self.costs.alpha2, "alpha3": self.costs.alpha3,
                "target": list(map(float, self.costs.target)),
                "obstacles": [
                    {"lo": list(map(float, b.lo)), "hi": list(map(float, b.hi)),
                     "mean": list(map(float, b.mean)),
                     "variances": list(map(float, b.variances))}
                    for b in self.costs.obstacles.boxes
                ],
            },
            "init": {
                "mean": list(map(float, self.init.mean)),
                "variance": self.init.variance, "seed": self.init.seed,
                "active_dims": (None if self.init.active_dims is None
                                else list(self.init.active_dims)),
            },
            "population": {"agents": self.agents},
            "solver": {
                "gamma": self.solver.gamma, "eps_tol": self.solver.eps_tol,
                "max_outer_iters": self.solver.max_outer_iters,
                "seed": self.solver.seed, "workers": self.solver.workers,
                "stop_on": self.solver.stop_on,
                "obstacle_ramp_iters": self.solver.obstacle_ramp_iters,
                "obstacle_ramp_factor": self.solver.obstacle_ramp_factor,
                "slide_rounds": self.solver.slide_rounds,
                "adapt_gamma": self.solver.adapt_gamma,
                "phases": [
                    {"method": p.method, "max_iters": p.max_iters, "memory": p.memory,
                     "sufficient_decrease": p.sufficient_decrease,
                     "curvature": p.curvature, "max_backtracks": p.max_backtracks,
                     "step_size": p.step_size, "grad_tol": p.grad_tol}
                    for p in self.solver.phases
                ],
            },
            "bench": {
                "sizes": list(self.bench.sizes), "repetitions": self.bench.repetitions,
                "seed": self.bench.seed,
                "reuse_source_agents": list(self.bench.reuse_source_agents),
                "reuse_eval_agents": self.bench.reuse_eval_agents,
                "reuse_eval_seed": self.bench.reuse_eval_seed,
                "race_runs": self.bench.race_runs,
                "race_grad_tol": self.bench.race_grad_tol,
                "race_exact_kernel": self.bench.race_exact_kernel,
                "race_coupled_max_iters": self.bench.race_coupled_max_iters,
                "race_coupled_memory": self.bench.race_coupled_memory,
            },
        }


_TOP_KEYS = ("model", "grid", "kernel", "features", "costs", "init",
             "population", "solver", "bench")


def parse_config(raw: dict) -> RunConfig:
    _check_keys(raw, _TOP_KEYS, "top level")
    defaults = RunConfig()

    sec = raw.get("model", {})
    _check_keys(sec, ("kind", "mass", "gravity"), "model")
    kind = _str(sec, "kind", DOUBLE_INTEGRATOR, "model", {DOUBLE_INTEGRATOR, QUADROTOR})
    model = DynamicsModel(
        kind=kind,
        mass=_num(sec, "mass", 1.0, "model"),
        gravity=_num(sec, "gravity", 9.81, "model"),
    )
    d = model.state_dim

    sec = raw.get("grid", {})
    _check_keys(sec, ("horizon", "nodes"), "grid")
    grid = TimeGrid(T=_num(sec, "horizon", 5.0, "grid"), n=_int(sec, "nodes", 50, "grid", 2))

    sec = raw.get("kernel", {})
    _check_keys(sec, ("alpha1", "bandwidth"), "kernel")
    kernel = KernelSpec(
        alpha1=_num(sec, "alpha1", 2e5, "kernel"),
        bandwidth=_num(sec, "bandwidth", 1.0, "kernel"),
    )

    sec = raw.get("features", {})
    _check_keys(
        sec,
        ("backend", "r", "seed", "load_from", "hidden", "num_samples", "iterations",
         "step_size", "decay_every", "decay_factor", "batch_size", "grad_penalty",
         "box", "validation_pairs", "near_fraction", "near_scale"),
        "features",
    )
    r = _int(sec, "r", 50, "features", 1)
    training = TrainingConfig(
        hidden=_int(sec, "hidden", 100, "features", 1),
        r=r,
        num_samples=_int(sec, "num_samples", 10_000, "features", 2),
        iterations=_int(sec, "iterations", 3_000, "features", 0),
        step_size=_num(sec, "step_size", 1e-3, "features"),
        decay_every=_int(sec, "decay_every", 10_000, "features", 1),
        decay_factor=_num(sec, "decay_factor", 0.1, "features"),
        batch_size=_int(sec, "batch_size", 1024, "features", 1),
        grad_penalty=_num(sec, "grad_penalty", 0.1, "features", 0.0),
        box=_num(sec, "box", 3.0, "features"),
        validation_pairs=_int(sec, "validation_pairs", 2_000, "features", 1),
        near_fraction=_num(sec, "near_fraction", 0.5, "features", 0.0),
        near_scale=_num(sec, "near_scale", 0.65, "features"),
    )
    features = FeatureConfig(
        backend=_str(sec, "backend", RANDOM_FEATURE, "features",
                     {RANDOM_FEATURE, TRAINED_NETWORK}),
        r=r,
        seed=_int(sec, "seed", 7, "features"),
        load_from=_str(sec, "load_from", "", "features"),
        training=training,
    )

    sec = raw.get("costs", {})
    _check_keys(sec, ("alpha2", "alpha3", "target", "obstacles", "obstacle"), "costs")
    default_target = [0.0] * d
    default_target[2] = 7.0
    target = _vector(sec, "target", default_target, "costs")
    if len(target) != d:
        raise ConfigError(f"costs.target must have {d} entries for {kind}")
    if "obstacle" in sec:
        boxes = []
        for i, ob in enumerate(sec["obstacle"]):
            _check_keys(ob, ("lo", "hi", "mean", "variances"), f"costs.obstacle[{i}]")
            boxes.append(ObstacleBox(
                lo=_vector(ob, "lo", None, "costs.obstacle"),
                hi=_vector(ob, "hi", None, "costs.obstacle"),
                mean=_vector(ob, "mean", None, "costs.obstacle"),
                variances=_vector(ob, "variances", None, "costs.obstacle"),
            ))
        obstacles = ObstacleField(boxes=tuple(boxes))
    else:
        name = _str(sec, "obstacles", "default" if kind == DOUBLE_INTEGRATOR else "none",
                    "costs", {"default", "none"})
        obstacles = default_obstacles() if name == "default" else ObstacleField()
    costs = CostSpec(
        alpha2=_num(sec, "alpha2", 1e7 if kind == DOUBLE_INTEGRATOR else 0.0, "costs", 0.0),
        alpha3=_num(sec, "alpha3", 1e4 if kind == DOUBLE_INTEGRATOR else 2e3, "costs", 0.0),
        target=np.asarray(target),
        obstacles=obstacles,
    )

    sec = raw.get("init", {})
    _check_keys(sec, ("mean", "variance", "seed", "active_dims"), "init")
    default_mean = [0.0] * d
    default_mean[1] = -0.5
    mean = _vector(sec, "mean", default_mean, "init")
    if len(mean) != d:
        raise ConfigError(f"init.mean must have {d} entries for {kind}")
    active = sec.get("active_dims", "all" if kind == DOUBLE_INTEGRATOR else "spatial")
    if active == "all":
        active_dims = None
    elif active == "spatial":
        active_dims = (0, 1, 2)
    elif isinstance(active, list) and all(isinstance(x, int) for x in active):
        active_dims = tuple(active)
    else:
        raise ConfigError("init.active_dims must be 'all', 'spatial', or a list of ints")
    init = InitialDistribution(
        mean=np.asarray(mean),
        variance=_num(sec, "variance", 0.8, "init", 0.0),
        seed=_int(sec, "seed", 11, "init"),
        active_dims=active_dims,
    )

    sec = raw.get("population", {})
    _check_keys(sec, ("agents",), "population")
    agents = _int(sec, "agents", 100, "population", 1)

    sec = raw.get("solver", {})
    _check_keys(sec, ("gamma", "eps_tol", "max_outer_iters", "seed", "workers",
                      "stop_on", "phase", "obstacle_ramp_iters",
                      "obstacle_ramp_factor", "slide_rounds", "adapt_gamma"), "solver")
    if "phase" in sec:
        phases = []
        for i, ph in enumerate(sec["phase"]):
            _check_keys(ph, ("method", "max_iters", "memory", "sufficient_decrease",
                             "curvature", "max_backtracks", "step_size", "grad_tol"),
                        f"solver.phase[{i}]")
            phases.append(OptimizerOptions(
                method=_str(ph, "method", LBFGS, "solver.phase", {LBFGS, GRADIENT_DESCENT}),
                max_iters=_int(ph, "max_iters", 100, "solver.phase", 0),
                memory=_int(ph, "memory", 10, "solver.phase", 1),
                sufficient_decrease=_num(ph, "sufficient_decrease", 1e-4, "solver.phase"),
                curvature=_num(ph, "curvature", 0.9, "solver.phase"),
                max_backtracks=_int(ph, "max_backtracks", 30, "solver.phase", 1),
                step_size=_num(ph, "step_size", 1.0, "solver.phase"),
                grad_tol=_num(ph, "grad_tol", 1e-3, "solver.phase"),
            ))
        phases = tuple(phases)
    else:
        phases = defaults.solver.phases
    gamma = sec.get("gamma")
    if gamma is not None:
        gamma = _num(sec, "gamma", None, "solver", 0.0)
    adapt = sec.get("adapt_gamma", True)
    if not isinstance(adapt, bool):
        raise ConfigError("solver.adapt_gamma must be a boolean")
    solver = SolverConfig(
        gamma=gamma,
        eps_tol=_num(sec, "eps_tol", 0.5, "solver"),
        max_outer_iters=_int(sec, "max_outer_iters", 60, "solver", 0),
        seed=_int(sec, "seed", 3, "solver"),
        workers=_int(sec, "workers", 1, "solver", 1),
        stop_on=_str(sec, "stop_on", "all", "solver", {"all", "jr_grad"}),
        obstacle_ramp_iters=_int(sec, "obstacle_ramp_iters", 0, "solver", 0),
        obstacle_ramp_factor=_num(sec, "obstacle_ramp_factor", 1e-4, "solver"),
        slide_rounds=_int(sec, "slide_rounds", 0, "solver", 0),
        adapt_gamma=adapt,
        phases=phases,
    )

    sec = raw.get("bench", {})
    _check_keys(sec, ("sizes", "repetitions", "seed", "reuse_source_agents",
                      "reuse_eval_agents", "reuse_eval_seed", "race_runs",
                      "race_grad_tol", "race_exact_kernel",
                      "race_coupled_max_iters", "race_coupled_memory"), "bench")
    exact = sec.get("race_exact_kernel", False)
    if not isinstance(exact, bool):
        raise ConfigError("bench.race_exact_kernel must be a boolean")
    bench = BenchConfig(
        sizes=tuple(int(x) for x in _vector(sec, "sizes", [500, 1000, 2000, 4000], "bench")),
        repetitions=_int(sec, "repetitions", 3, "bench", 3),
        seed=_int(sec, "seed", 5, "bench"),
        reuse_source_agents=tuple(int(x) for x in _vector(
            sec, "reuse_source_agents", [50, 100], "bench")),
        reuse_eval_agents=_int(sec, "reuse_eval_agents", 200, "bench", 1),
        reuse_eval_seed=_int(sec, "reuse_eval_seed", 404, "bench"),
        race_runs=_int(sec, "race_runs", 3, "bench", 1),
        race_grad_tol=_num(sec, "race_grad_tol", 0.5, "bench"),
        race_exact_kernel=exact,
        race_coupled_max_iters=_int(sec, "race_coupled_max_iters", 15_000, "bench", 1),
        race_coupled_memory=_int(sec, "race_coupled_memory", 30, "bench", 1),
    )

    return RunConfig(
        model=model, grid=grid, kernel=kernel, features=features,
        costs=costs, init=init, agents=agents, solver=solver, bench=bench,
    )


def load_config(path) -> RunConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    return parse_config(raw)


def load_raw(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply dotted KEY=VALUE strings; values are parsed as TOML literals."""
    for ov in overrides:
        if "=" not in ov:
            raise ConfigError(f"override {ov!r} is not KEY=VALUE")
        key, _, value = ov.partition("=")
        try:
            parsed = tomllib.loads(f"v = {value}")["v"]
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"override value {value!r} is not a TOML literal: {e}")
        node = raw
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-table value")
        node[parts[-1]] = parsed
    return raw


def config_hash(cfg: RunConfig) -> str:
    doc = json.dumps(cfg.canonical(), sort_keys=True)
    return hashlib.sha256(doc.encode()).hexdigest()


def build_feature_map(cfg: RunConfig):
    """Construct (or load) the configured feature map; returns (map, report)."""
    fc = cfg.features
    if fc.load_from:
        from .persistence import load_featuremap

        return load_featuremap(fc.load_from), None
    if fc.backend == RANDOM_FEATURE:
        return rff_features(cfg.kernel, fc.r, fc.seed), None
    return fit_mlp_features(cfg.kernel, fc.training, fc.seed)


def build_problem(cfg: RunConfig, fmap: FeatureMap | None = None) -> ProblemSpec:
    if fmap is None:
        fmap, _ = build_feature_map(cfg)
    return ProblemSpec(
        model=cfg.model, grid=cfg.grid, kernel=cfg.kernel, fmap=fmap,
        costs=cfg.costs, init=cfg.init, N=cfg.agents,
    )


def build_coupled_options(cfg: RunConfig) -> OptimizerOptions:
    """Coupled-baseline optimizer settings for races and baseline solves."""
    from dataclasses import replace

    return replace(
        cfg.solver.phases[0],
        max_iters=cfg.bench.race_coupled_max_iters,
        memory=cfg.bench.race_coupled_memory,
        grad_tol=cfg.bench.race_grad_tol,
    )


def build_pd_options(cfg: RunConfig, workers: int | None = None) -> PrimalDualOptions:
    s = cfg.solver
    return PrimalDualOptions(
        gamma=s.gamma, inner=s.phases, max_outer_iters=s.max_outer_iters,
        eps_tol=s.eps_tol, seed=s.seed,
        workers=s.workers if workers is None else workers, stop_on=s.stop_on,
        obstacle_ramp_iters=s.obstacle_ramp_iters,
        obstacle_ramp_factor=s.obstacle_ramp_factor,
        slide_rounds=s.slide_rounds,
        adapt_gamma=s.adapt_gamma,
    )
