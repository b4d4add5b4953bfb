"""Reuse interaction coefficients fitted on a small population.

The dual variables summarize the population's aggregate interaction, so
they can be fitted once with few agents and reused to steer a larger
population by solving only the decoupled per-agent problems (no saddle
point, fully parallel). This script fits coefficients with 30 and 60
agents and re-solves a fixed 120-agent set against each, reporting how
little the trajectories differ from the 120-agent reference.
"""

from pathlib import Path

from mfcontrol.bench import reuse_study
from mfcontrol.config import build_pd_options, build_problem, load_config

cfg = load_config(Path(__file__).parent.parent / "configs/desk-double-integrator.toml")
spec = build_problem(cfg)
opts = build_pd_options(cfg)

print("fitting coefficients at N = 30, 60, 120 and re-solving the primal")
print("for one fixed 120-agent population (this runs three saddle solves)...")
reports = reuse_study([30, 60], 120, spec, opts, eval_seed=cfg.bench.reuse_eval_seed)

print(f"\n{'source N':>9} {'rel traj diff':>14} {'rel coeff diff':>15}")
for rep in reports:
    print(f"{rep.source_N:9d} {rep.rel_traj_diff:14.5f} {rep.rel_coeff_diff:15.5f}")
print("\nThe eval-sized source reproduces itself exactly (0.0); small sources")
print("land within a few percent because the coefficients only see the")
print("population through its feature mean.")
