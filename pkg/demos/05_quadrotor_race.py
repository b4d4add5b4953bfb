"""Coupled vs primal-dual on a quadrotor swarm, racing to a gradient norm.

The coupled baseline minimizes the population objective J_r over every
agent's controls jointly; the primal-dual solver alternates decoupled
per-agent solves with the closed-form coefficient update. Both run three
times from the same seed (the math is deterministic, the clock is not) and
the fastest run of each is compared at the J_r gradient threshold 0.5.
"""

from pathlib import Path

from mfcontrol.bench import solver_race
from mfcontrol.config import build_pd_options, build_problem, load_config

cfg = load_config(Path(__file__).parent.parent / "configs/desk-quadrotor-race.toml")
cfg.bench.__dict__["race_runs"] = 1  # demo: single timed run per solver
spec = build_problem(cfg)
opts = build_pd_options(cfg)

print(f"racing both solvers on {spec.N} quadrotors to ||grad J_r|| <= "
      f"{cfg.bench.race_grad_tol} ...")
entries, summary = solver_race(spec, opts, cfg.solver.phases[0],
                               grad_tol=cfg.bench.race_grad_tol,
                               runs=cfg.bench.race_runs)
for solver in ("primal_dual", "coupled"):
    s = summary[solver]
    print(f"  {solver:12s} reached={s['reached']}  "
          f"time to threshold {s['time_to_threshold_s']:.1f}s")
print("primal-dual faster" if summary["primal_dual_faster"] else "coupled faster")
