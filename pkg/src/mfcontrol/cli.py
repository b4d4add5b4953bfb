"""Command-line pipeline: fit kernels, solve swarms, benchmark, reuse.

One experiment is one TOML config plus optional dotted-key overrides.
Machine-readable results go to files in the output directory; stdout gets
short human-readable progress lines. Exit codes: 0 success, 2 usage error,
3 solver did not converge, 4 incompatible artifact.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    build_coupled_options,
    build_feature_map,
    build_pd_options,
    build_problem,
    config_hash,
    load_raw,
    parse_config,
)
from .core import (
    DualCoefficients,
    ProblemSpec,
    jr_value_and_grad,
    phi_value_and_grad,
    sample_initial_conditions,
)
from .dynamics import ControlSchedule, euler_rollout
from .errors import IncompatibleArtifact
from .features import validate_kernel_fit
from .persistence import (
    CoefficientArchive,
    export_history,
    export_trajectories,
    load_dual,
    save_dual,
    save_featuremap,
)
from .solvers import coupled_solve, primal_dual_solve, solve_primal_only

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_CONVERGED = 3
EXIT_INCOMPATIBLE = 4


def _load(args) -> RunConfig:
    raw = load_raw(args.config) if args.config else {}
    raw = apply_overrides(raw, args.override or [])
    if args.seed is not None:
        raw.setdefault("solver", {})["seed"] = args.seed
    if args.workers is not None:
        raw.setdefault("solver", {})["workers"] = args.workers
    return parse_config(raw)


def _outdir(args) -> Path:
    out = Path(args.out or "out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_config(cfg: RunConfig, out: Path) -> str:
    h = config_hash(cfg)
    doc = {"config_hash": h, "config": cfg.canonical()}
    (out / "run_config.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    return h


def cmd_fit_kernel(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    h = _write_config(cfg, out)
    fmap, report = build_feature_map(cfg)
    save_featuremap(out / "featuremap.json", fmap)
    mse = validate_kernel_fit(fmap, cfg.kernel, cfg.features.training.validation_pairs,
                              cfg.features.seed + 1, box=cfg.features.training.box)
    doc = {"config_hash": h, "kernel_mse": mse}
    if report is not None:
        doc["fit_report"] = asdict(report)
    (out / "fit_report.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    unit = mse / cfg.kernel.alpha1**2
    print(f"feature map written to {out / 'featuremap.json'}")
    print(f"kernel fit MSE: {mse:.6g} (unit-kernel scale {unit:.6g})")
    return EXIT_OK


def _write_scene(out: Path, spec: ProblemSpec) -> None:
    doc = {
        "target": [float(v) for v in spec.costs.target[:3]],
        "obstacles": [
            {"lo": [float(v) for v in b.lo], "hi": [float(v) for v in b.hi]}
            for b in spec.costs.obstacles.boxes
        ],
    }
    (out / "scene.json").write_text(json.dumps(doc, sort_keys=True))


def _export_solution(out: Path, spec: ProblemSpec, result, h: str) -> None:
    save_featuremap(out / "featuremap.json", spec.fmap)
    save_dual(out / "coefficients.json", CoefficientArchive(
        coefficients=result.a, config_hash=h,
        converged=result.converged, source_agents=spec.N,
    ))
    export_trajectories(result.rollout, spec.grid, out / "trajectories.csv")
    export_history(result.history, out / "history.csv")
    _write_scene(out, spec)


def cmd_solve(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    h = _write_config(cfg, out)
    spec = build_problem(cfg)
    opts = build_pd_options(cfg)
    print(f"solving {spec.model.kind} swarm: N={spec.N}, n={spec.grid.n}, "
          f"r={spec.fmap.r}, eps_tol={opts.eps_tol}")
    result = primal_dual_solve(spec, opts)
    _export_solution(out, spec, result, h)
    last = result.history.records[-1]
    print(f"outer iterations: {len(result.history)}; primal {last.primal_grad_norm:.3g}, "
          f"dual {last.dual_residual_max:.3g}, Jr grad {last.jr_grad_norm:.3g}")
    if not result.converged:
        print("NOT converged within the outer budget")
        return EXIT_NOT_CONVERGED
    print("converged")
    return EXIT_OK


def cmd_solve_coupled(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    h = _write_config(cfg, out)
    spec = build_problem(cfg)
    z0 = sample_initial_conditions(spec.init, spec.N)
    coupled_opts = build_coupled_options(cfg)
    theta, history, converged = coupled_solve(
        spec, coupled_opts, z0=z0, seed=cfg.solver.seed,
        exact_kernel=cfg.bench.race_exact_kernel,
    )
    rollout = euler_rollout(spec.model, z0, theta, spec.grid)
    export_trajectories(rollout, spec.grid, out / "trajectories.csv")
    export_history(history, out / "history.csv")
    save_featuremap(out / "featuremap.json", spec.fmap)
    last = history.records[-1]
    print(f"coupled solve: {len(history)} iterations, Jr grad {last.jr_grad_norm:.3g}")
    if not converged:
        print("NOT converged to grad_tol")
        return EXIT_NOT_CONVERGED
    print("converged")
    return EXIT_OK


def cmd_reuse(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    h = _write_config(cfg, out)
    spec = build_problem(cfg)
    archive = load_dual(args.coefficients, spec)  # raises on fingerprint mismatch
    z0 = sample_initial_conditions(spec.init, spec.N, seed=cfg.bench.reuse_eval_seed)
    theta = solve_primal_only(
        archive.coefficients, spec, z0, cfg.solver.phases, cfg.solver.eps_tol,
        seed=cfg.solver.seed, workers=cfg.solver.workers,
    )
    rollout = euler_rollout(spec.model, z0, theta, spec.grid)
    export_trajectories(rollout, spec.grid, out / "trajectories.csv")
    print(f"re-solved primal for {spec.N} agents with coefficients "
          f"fitted on {archive.source_agents}")
    return EXIT_OK


def cmd_reuse_study(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    _write_config(cfg, out)
    spec = build_problem(cfg)
    opts = build_pd_options(cfg)
    reports = bench_mod.reuse_study(
        cfg.bench.reuse_source_agents, cfg.bench.reuse_eval_agents, spec, opts,
        eval_seed=cfg.bench.reuse_eval_seed,
    )
    lines = ["source_N,eval_N,rel_traj_diff,rel_coeff_diff"]
    for rep in reports:
        lines.append(f"{rep.source_N},{rep.eval_N},{rep.rel_traj_diff!r},{rep.rel_coeff_diff!r}")
        print(f"source {rep.source_N:5d} -> eval {rep.eval_N}: "
              f"traj diff {rep.rel_traj_diff:.4g}, coeff diff {rep.rel_coeff_diff:.4g}")
    (out / "reuse.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_bench_interaction(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    _write_config(cfg, out)
    spec = build_problem(cfg)
    records, slopes = bench_mod.bench_interaction(
        cfg.bench.sizes, spec, repetitions=cfg.bench.repetitions,
        seed=cfg.bench.seed, workers=cfg.solver.workers,
    )
    lines = ["method,N,seconds"]
    for rec in records:
        lines.append(f"{rec.label},{rec.N},{rec.seconds!r}")
    (out / "bench_interaction.csv").write_text("\n".join(lines) + "\n")
    for label, slope in slopes.items():
        print(f"{label}: log-log slope {slope:.3f}")
    return EXIT_OK


def cmd_race(args) -> int:
    cfg = _load(args)
    out = _outdir(args)
    _write_config(cfg, out)
    spec = build_problem(cfg)
    opts = build_pd_options(cfg)
    entries, summary = bench_mod.solver_race(
        spec, opts, build_coupled_options(cfg),
        grad_tol=cfg.bench.race_grad_tol, runs=cfg.bench.race_runs,
        exact_kernel=cfg.bench.race_exact_kernel,
    )
    lines = ["solver,run,reached,time_to_threshold_s"]
    for e in entries:
        lines.append(f"{e.solver},{e.run},{int(e.reached)},{e.time_to_threshold_s!r}")
        export_history(e.history, out / f"race_history_{e.solver}_{e.run}.csv")
    (out / "race.csv").write_text("\n".join(lines) + "\n")
    for solver in ("primal_dual", "coupled"):
        s = summary[solver]
        print(f"{solver}: reached={s['reached']} best time {s['time_to_threshold_s']:.2f}s")
    print("primal-dual faster" if summary["primal_dual_faster"] else "coupled faster")
    return EXIT_OK


def _gradient_checks(cfg: RunConfig, tol: float = 1e-5):
    """Finite-difference suite over small random instances of both models."""
    from .config import parse_config

    results = []
    eps = 1e-6
    for kind in ("double_integrator", "quadrotor"):
        raw = {"model": {"kind": kind}, "grid": {"horizon": 1.0, "nodes": 8},
               "kernel": {"alpha1": 2.0}, "features": {"r": 6, "seed": 3},
               "population": {"agents": 3}}
        spec = build_problem(parse_config(raw))
        rng = np.random.default_rng(cfg.solver.seed)
        for trial in range(3):
            z0 = sample_initial_conditions(spec.init, spec.N, seed=trial)
            TH = rng.normal(0.0, 0.3, (spec.N, spec.grid.n, spec.model.control_dim))
            a = rng.normal(0.0, 0.3, (spec.grid.n, spec.fmap.r))
            for name, val_grad in (
                ("phi", lambda t: phi_value_and_grad(a, t, z0, spec)),
                ("jr", lambda t: jr_value_and_grad(t, z0, spec)),
            ):
                _, g = val_grad(TH)
                fd = np.zeros_like(g)
                for (l, k, j) in np.ndindex(*TH.shape):
                    t1 = TH.copy(); t1[l, k, j] += eps
                    t2 = TH.copy(); t2[l, k, j] -= eps
                    v1, _ = val_grad(t1)
                    v2, _ = val_grad(t2)
                    diff = (v1[l] - v2[l]) if name == "phi" else (v1 - v2)
                    fd[l, k, j] = diff / (2 * eps)
                rel = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
                results.append((f"{kind}/{name}/{trial}", rel, rel <= tol))
    return results


def cmd_check_grad(args) -> int:
    cfg = _load(args)
    results = _gradient_checks(cfg)
    worst = 0.0
    ok = True
    for name, rel, passed in results:
        print(f"{'ok ' if passed else 'FAIL'} {name}: rel err {rel:.3e}")
        worst = max(worst, rel)
        ok &= passed
    print(f"worst relative error: {worst:.3e}")
    return EXIT_OK if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfcontrol",
        description="Swarm mean-field control via kernel expansions and primal-dual solves",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    commands = {
        "fit-kernel": (cmd_fit_kernel, "fit or draw a feature map and report kernel MSE"),
        "solve": (cmd_solve, "run the primal-dual swarm solve"),
        "solve-coupled": (cmd_solve_coupled, "run the coupled baseline"),
        "reuse": (cmd_reuse, "re-solve only the primal with saved coefficients"),
        "reuse-study": (cmd_reuse_study, "full coefficient-reuse comparison"),
        "bench-interaction": (cmd_bench_interaction, "time interaction evaluators"),
        "race": (cmd_race, "coupled vs primal-dual wall-clock race"),
        "check-grad": (cmd_check_grad, "finite-difference gradient audit"),
    }
    for name, (fn, help_text) in commands.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config path")
        p.add_argument("--out", help="output directory (default ./out)")
        p.add_argument("--seed", type=int, help="override solver.seed")
        p.add_argument("--workers", type=int, help="override solver.workers")
        p.add_argument("--override", action="append", metavar="KEY=VALUE",
                       help="dotted config override, repeatable")
        if name == "reuse":
            p.add_argument("--coefficients", required=True,
                           help="coefficients.json from a previous solve")
        p.set_defaults(fn=fn)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except IncompatibleArtifact as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
