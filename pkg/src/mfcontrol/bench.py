"""Timing and reuse studies.

Three harnesses: interaction-cost scaling (exact pairwise sum vs feature
factorization over growing N), the coefficient-reuse study (fit the
interaction coefficients on a small population, re-solve only the decoupled
primal problems for a larger fixed population), and the solver race
(coupled minimization of J_r vs the primal-dual loop, fastest of three runs
each, stopped at a gradient-norm threshold).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

import numpy as np

from .core import (
    ControlSchedule,
    ProblemSpec,
    SolveHistory,
    sample_initial_conditions,
)
from .costs import interaction_direct, interaction_features
from .dynamics import euler_rollout
from .solvers import (
    OptimizerOptions,
    PrimalDualOptions,
    coupled_solve,
    primal_dual_solve,
    solve_primal_only,
)


@dataclass(frozen=True)
class TimingRecord:
    label: str
    N: int
    repetitions: int
    seconds: float  # fastest repetition, per evaluation
    workers: int = 1

    def __post_init__(self):
        if self.repetitions < 3:
            raise ValueError("need at least three repetitions")
        if self.seconds <= 0:
            raise ValueError("seconds must be positive")


@dataclass(frozen=True)
class ReuseReport:
    source_N: int
    eval_N: int
    rel_traj_diff: float
    rel_coeff_diff: float
    source_converged: bool = True

    def __post_init__(self):
        if self.rel_traj_diff < 0 or self.rel_coeff_diff < 0:
            raise ValueError("relative differences must be nonnegative")


@dataclass
class RaceEntry:
    solver: str
    run: int
    reached: bool
    time_to_threshold_s: float
    final_grad_norm: float
    history: SolveHistory


def _time_call(fn, repetitions: int) -> float:
    best = np.inf
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_interaction(
    Ns, spec: ProblemSpec, repetitions: int = 3, seed: int = 5, workers: int = 1
):
    """Time both interaction evaluators per population size.

    Positions are drawn uniformly from the kernel-fit box. Returns the
    records plus the fitted log-log slope per method.
    """
    Ns = list(Ns)
    if not Ns or any(n < 1 for n in Ns):
        raise ValueError("population sizes must be positive")
    rng = np.random.default_rng(seed)
    records: list[TimingRecord] = []
    for N in Ns:
        P = rng.uniform(-3.0, 3.0, size=(N, 3))
        t_direct = _time_call(lambda: interaction_direct(P, spec.kernel.pairwise), repetitions)
        t_feat = _time_call(lambda: interaction_features(P, spec.fmap), repetitions)
        records.append(TimingRecord("direct", N, repetitions, t_direct, workers))
        records.append(TimingRecord("features", N, repetitions, t_feat, workers))
    slopes = {}
    for label in ("direct", "features"):
        pts = [(r.N, r.seconds) for r in records if r.label == label]
        if len(pts) >= 2:
            logn = np.log([p[0] for p in pts])
            logt = np.log([p[1] for p in pts])
            slopes[label] = float(np.polyfit(logn, logt, 1)[0])
    return records, slopes


def reuse_study(
    source_Ns,
    eval_N: int,
    spec: ProblemSpec,
    opts: PrimalDualOptions,
    eval_seed: int = 404,
    resolve_seed: int = 17,
) -> list[ReuseReport]:
    """Fit coefficients at several population sizes, reuse on a fixed set.

    For each source size the saddle point is solved from scratch; the
    resulting coefficients then drive a primal-only solve for one fixed set
    of eval_N initial conditions (identical warm start for every source).
    Differences are Frobenius norms relative to the eval_N-sourced
    reference.
    """
    z0_eval = sample_initial_conditions(spec.init, eval_N, seed=eval_seed)

    def fit(N):
        return primal_dual_solve(replace(spec, N=N), opts)

    ref = fit(eval_N)

    def resolve(a):
        theta = solve_primal_only(
            a, spec, z0_eval, opts.inner, opts.eps_tol,
            seed=resolve_seed, workers=opts.workers,
        )
        return euler_rollout(spec.model, z0_eval, theta, spec.grid).states

    z_ref = resolve(ref.a)
    ref_norm = float(np.linalg.norm(z_ref))
    a_ref_norm = float(np.linalg.norm(ref.a.values))
    reports = []
    for N in list(source_Ns) + [eval_N]:
        if N == eval_N:
            src, z_src = ref, resolve(ref.a)
        else:
            src = fit(N)
            z_src = resolve(src.a)
        reports.append(ReuseReport(
            source_N=N,
            eval_N=eval_N,
            rel_traj_diff=float(np.linalg.norm(z_src - z_ref)) / ref_norm,
            rel_coeff_diff=float(np.linalg.norm(src.a.values - ref.a.values)) / a_ref_norm,
            source_converged=src.converged,
        ))
    return reports


def _time_to_threshold(history: SolveHistory, tol: float):
    for rec in history.records:
        if rec.jr_grad_norm <= tol:
            return True, rec.wall_clock_s
    return False, history.records[-1].wall_clock_s if history.records else 0.0


def solver_race(
    spec: ProblemSpec,
    pd_opts: PrimalDualOptions,
    coupled_opts: OptimizerOptions,
    grad_tol: float = 0.5,
    runs: int = 3,
    exact_kernel: bool = False,
):
    """Race the coupled and primal-dual solvers to a J_r gradient threshold.

    Both start from the same seed; each is run ``runs`` times and the
    fastest run kept (the math is deterministic, the clock is not). Returns
    (entries, summary).
    """
    z0 = sample_initial_conditions(spec.init, spec.N)
    pd_opts = replace(pd_opts, stop_on="jr_grad", eps_tol=grad_tol)
    coupled_opts = replace(coupled_opts, grad_tol=grad_tol)
    entries: list[RaceEntry] = []
    for run in range(runs):
        res = primal_dual_solve(spec, pd_opts, z0=z0)
        reached, t = _time_to_threshold(res.history, grad_tol)
        entries.append(RaceEntry(
            "primal_dual", run, reached, t,
            res.history.records[-1].jr_grad_norm if len(res.history) else float("nan"),
            res.history,
        ))
    for run in range(runs):
        theta, history, reached = coupled_solve(
            spec, coupled_opts, z0=z0, seed=pd_opts.seed, exact_kernel=exact_kernel
        )
        ok, t = _time_to_threshold(history, grad_tol)
        entries.append(RaceEntry(
            "coupled", run, ok, t,
            history.records[-1].jr_grad_norm if len(history) else float("nan"),
            history,
        ))
    summary = {}
    for solver in ("primal_dual", "coupled"):
        best = min(
            (e for e in entries if e.solver == solver),
            key=lambda e: (not e.reached, e.time_to_threshold_s),
        )
        summary[solver] = {
            "reached": best.reached,
            "time_to_threshold_s": best.time_to_threshold_s,
        }
    summary["primal_dual_faster"] = (
        summary["primal_dual"]["time_to_threshold_s"]
        <= summary["coupled"]["time_to_threshold_s"]
    )
    return entries, summary
