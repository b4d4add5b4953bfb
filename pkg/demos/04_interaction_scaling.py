"""Interaction-cost scaling: pairwise sum vs feature factorization.

The pairwise interaction energy costs O(N^2) kernel evaluations; through
the feature mean it costs O(N r). This script times both over a range of
population sizes and fits the log-log slopes (expect ~2 vs ~1).
"""

from mfcontrol.bench import bench_interaction
from mfcontrol.config import build_problem, parse_config

cfg = parse_config({"kernel": {"alpha1": 1.0}, "features": {"r": 200, "seed": 5}})
spec = build_problem(cfg)

sizes = [500, 1000, 2000, 4000, 8000]
print(f"timing interaction evaluators at N = {sizes} (fastest of 3)...")
records, slopes = bench_interaction(sizes, spec)

print(f"\n{'N':>6} {'direct [s]':>12} {'features [s]':>13}")
by = {(r.label, r.N): r.seconds for r in records}
for N in sizes:
    print(f"{N:6d} {by[('direct', N)]:12.6f} {by[('features', N)]:13.6f}")
print(f"\nlog-log slope, direct:   {slopes['direct']:.2f}  (quadratic cost)")
print(f"log-log slope, features: {slopes['features']:.2f}  (linear cost)")
