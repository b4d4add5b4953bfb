"""Artifact files: coefficients, feature maps, trajectories, histories.

Every artifact embeds the producing configuration hash, and coefficient
archives carry grid and feature-map fingerprints so that a reuse run
against an incompatible setup fails loudly instead of silently producing
garbage. Float serialization goes through repr, which round-trips binary64
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DualCoefficients,
    ProblemSpec,
    SolveHistory,
    grid_fingerprint,
    make_dual,
    sample_initial_conditions,
)
from .dynamics import Rollout, TimeGrid
from .errors import IncompatibleArtifact
from .features import FeatureMap, featuremap_fingerprint, featuremap_from_json, featuremap_to_json

__all__ = [
    "CoefficientArchive",
    "sample_initial_conditions",
    "save_dual",
    "load_dual",
    "save_featuremap",
    "load_featuremap",
    "export_trajectories",
    "export_history",
    "STATE_COLUMNS",
]

STATE_COLUMNS = {
    6: ["x", "y", "z", "vx", "vy", "vz"],
    12: ["x", "y", "z", "psi", "theta", "phi",
         "vx", "vy", "vz", "vpsi", "vtheta", "vphi"],
}


@dataclass(frozen=True)
class CoefficientArchive:
    """Persisted dual coefficients plus provenance for compatibility checks."""

    coefficients: DualCoefficients
    config_hash: str = ""
    converged: bool = True
    source_agents: int = 0


def save_dual(path, archive: CoefficientArchive) -> None:
    a = archive.coefficients
    doc = {
        "values": [[float(v) for v in row] for row in a.values],
        "grid_fingerprint": a.grid_fingerprint,
        "map_fingerprint": a.map_fingerprint,
        "config_hash": archive.config_hash,
        "converged": archive.converged,
        "source_agents": archive.source_agents,
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_dual(path, spec: ProblemSpec | None = None) -> CoefficientArchive:
    """Load coefficients; with a spec given, verify fingerprints against it."""
    doc = json.loads(Path(path).read_text())
    arch = CoefficientArchive(
        coefficients=DualCoefficients(
            values=np.asarray(doc["values"], dtype=float),
            grid_fingerprint=doc["grid_fingerprint"],
            map_fingerprint=doc["map_fingerprint"],
        ),
        config_hash=doc.get("config_hash", ""),
        converged=bool(doc.get("converged", True)),
        source_agents=int(doc.get("source_agents", 0)),
    )
    if spec is not None:
        verify_compatible(arch.coefficients, spec)
    return arch


def verify_compatible(a: DualCoefficients, spec: ProblemSpec) -> None:
    if a.grid_fingerprint != grid_fingerprint(spec.grid):
        raise IncompatibleArtifact("grid_fingerprint", "time grid differs")
    if a.map_fingerprint != featuremap_fingerprint(spec.fmap):
        raise IncompatibleArtifact("map_fingerprint", "feature map differs")
    if a.values.shape != (spec.grid.n, spec.fmap.r):
        raise IncompatibleArtifact("values", "coefficient shape differs")


def save_featuremap(path, fmap: FeatureMap) -> None:
    Path(path).write_text(featuremap_to_json(fmap))


def load_featuremap(path) -> FeatureMap:
    return featuremap_from_json(Path(path).read_text())


def export_trajectories(rollout: Rollout, grid: TimeGrid, path) -> None:
    """CSV of all agent trajectories, one row per (agent, node)."""
    Z = rollout.states
    N, n, d = Z.shape
    cols = STATE_COLUMNS.get(d, [f"s{i}" for i in range(d)])
    t = grid.nodes
    lines = ["agent,t," + ",".join(cols)]
    for l in range(N):
        for k in range(n):
            vals = ",".join(repr(float(v)) for v in Z[l, k])
            lines.append(f"{l},{float(t[k])!r},{vals}")
    Path(path).write_text("\n".join(lines) + "\n")


def export_history(history: SolveHistory, path) -> None:
    """CSV with one row per outer iteration of a solve."""
    lines = ["iter,primal_grad_norm,dual_residual_max,Jr_grad_norm,Jr_value,wall_clock_s"]
    for rec in history.records:
        lines.append(
            f"{rec.iteration},{rec.primal_grad_norm!r},{rec.dual_residual_max!r},"
            f"{rec.jr_grad_norm!r},{rec.jr_value!r},{rec.wall_clock_s!r}"
        )
    Path(path).write_text("\n".join(lines) + "\n")
