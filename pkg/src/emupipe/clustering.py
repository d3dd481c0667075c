"""Grouping of runs whose outputs move together.

Runs are first grouped by everything except their management settings (same
soil, weather, planting and conductivity); only within such a group is
"these simulations behave alike" meaningful.  For each pair the similarity
score is the minimum, over the four output variables, of the Pearson
correlation of the two series across the shared training days.  Pairs scoring
at or above the threshold are linked, and clusters are the connected
components of that graph (a stricter greedy-clique mode is available).

Correlation is undefined when either series is constant or fewer than two
shared days exist; undefined pairs are never linked and appear in score
matrices as the sentinel UNDEFINED (-2.0, below any real correlation).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import OUTPUT_VARIABLES, ModelRun, SplitSpec
from .errors import LengthMismatch, NoRuns

logger = logging.getLogger(__name__)

# Sentinel for "correlation undefined" in matrix form. Any threshold in
# [-1, 1] keeps these pairs unlinked.
UNDEFINED = -2.0

# ScenarioKey fields that define a comparison group (management excluded).
GROUP_FIELDS = ("soil_type", "meteorology_id", "planting_month",
                "planting_year", "conductivity")


def pearson(a, b) -> float | None:
    """Sample Pearson correlation, or None when undefined."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise LengthMismatch(len(a), len(b))
    if a.ndim != 1:
        raise ValueError("pearson expects 1-d series")
    if len(a) < 2:
        return None
    da = a - a.mean()
    db = b - b.mean()
    va = float(da @ da)
    vb = float(db @ db)
    if va == 0.0 or vb == 0.0:
        return None
    r = float(da @ db) / np.sqrt(va * vb)
    return float(min(1.0, max(-1.0, r)))


def min_output_correlation(run_a: ModelRun, run_b: ModelRun,
                           train_range) -> float | None:
    """Minimum over output variables of the two runs' correlation.

    Series are restricted to days the runs share inside ``train_range``.
    None if any single variable's correlation is undefined there.
    """
    lo, hi = train_range
    a = run_a.window(lo, hi)
    b = run_b.window(lo, hi)
    if a.n_days == 0 or b.n_days == 0:
        return None
    common_lo = max(a.dates[0], b.dates[0])
    common_hi = min(a.dates[-1], b.dates[-1])
    if common_lo > common_hi:
        return None
    a = a.window(common_lo, common_hi)
    b = b.window(common_lo, common_hi)
    worst = 1.0
    for var in OUTPUT_VARIABLES:
        r = pearson(a.outputs[var], b.outputs[var])
        if r is None:
            return None
        worst = min(worst, r)
    return worst


def group_key(run: ModelRun) -> tuple:
    return tuple(getattr(run.key, name) for name in GROUP_FIELDS)


def group_runs(runs) -> dict[tuple, list[ModelRun]]:
    """Runs bucketed by non-management scenario fields, deterministically ordered."""
    if not runs:
        raise NoRuns("group_runs")
    buckets: dict[tuple, list[ModelRun]] = {}
    for run in runs:
        buckets.setdefault(group_key(run), []).append(run)
    ordered = {}
    for key in sorted(buckets, key=lambda k: tuple(str(v) for v in k)):
        ordered[key] = sorted(buckets[key], key=lambda r: r.run_id)
    return ordered


@dataclass
class ScoreMatrix:
    """Pairwise minimum-correlation scores for one group of runs."""

    run_ids: tuple[str, ...]
    values: np.ndarray          # (n, n) symmetric, 1.0 diagonal, UNDEFINED sentinel

    def score(self, id_a: str, id_b: str) -> float | None:
        v = self.values[self.run_ids.index(id_a), self.run_ids.index(id_b)]
        return None if v == UNDEFINED else float(v)


def score_group(runs, train_range) -> ScoreMatrix:
    """All pairwise scores within one group. Quadratic in the group size."""
    runs = sorted(runs, key=lambda r: r.run_id)
    n = len(runs)
    values = np.full((n, n), UNDEFINED, dtype=np.float64)
    np.fill_diagonal(values, 1.0)
    for i in range(n):
        for j in range(i + 1, n):
            r = min_output_correlation(runs[i], runs[j], train_range)
            if r is not None:
                values[i, j] = values[j, i] = r
    return ScoreMatrix(run_ids=tuple(r.run_id for r in runs), values=values)


@dataclass(frozen=True)
class Cluster:
    """A set of runs trained together, with the grouping that produced it."""

    cluster_id: str
    run_ids: tuple[str, ...]
    group: dict
    threshold: float

    def to_dict(self) -> dict:
        return {"cluster_id": self.cluster_id, "run_ids": list(self.run_ids),
                "group": dict(self.group), "threshold": self.threshold}

    @classmethod
    def from_dict(cls, data: dict) -> "Cluster":
        return cls(cluster_id=data["cluster_id"], run_ids=tuple(data["run_ids"]),
                   group=dict(data["group"]), threshold=float(data["threshold"]))


def _components(adjacency: np.ndarray) -> list[list[int]]:
    n = adjacency.shape[0]
    seen = np.zeros(n, dtype=bool)
    components = []
    for start in range(n):
        if seen[start]:
            continue
        stack, members = [start], []
        seen[start] = True
        while stack:
            node = stack.pop()
            members.append(node)
            for other in np.flatnonzero(adjacency[node]):
                if not seen[other]:
                    seen[other] = True
                    stack.append(int(other))
        components.append(sorted(members))
    return components


def _greedy_cliques(adjacency: np.ndarray) -> list[list[int]]:
    """Cliques grown greedily in index order; every member linked to every other."""
    n = adjacency.shape[0]
    assigned = np.zeros(n, dtype=bool)
    cliques = []
    for start in range(n):
        if assigned[start]:
            continue
        members = [start]
        assigned[start] = True
        for other in range(start + 1, n):
            if not assigned[other] and all(adjacency[other, m] for m in members):
                members.append(other)
                assigned[other] = True
        cliques.append(members)
    return cliques


def extract_clusters(runs, threshold: float, split: SplitSpec | None = None,
                     mode: str = "component") -> list[Cluster]:
    """Partition runs into clusters at the given score threshold.

    Every run lands in exactly one cluster; runs with no qualifying partner
    become singletons.  ``mode`` is "component" (linked directly or through
    intermediaries) or "clique" (every pair in a cluster linked directly).
    Deterministic for a fixed input set.
    """
    if not -1.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [-1, 1], got {threshold}")
    if mode not in ("component", "clique"):
        raise ValueError(f"mode must be 'component' or 'clique', got {mode!r}")
    if split is None:
        split = SplitSpec.default()
    train_range = split.range_for("train")

    clusters = []
    counter = 0
    for key, members in group_runs(runs).items():
        matrix = score_group(members, train_range)
        adjacency = matrix.values >= threshold
        np.fill_diagonal(adjacency, False)
        parts = (_components(adjacency) if mode == "component"
                 else _greedy_cliques(adjacency))
        group = dict(zip(GROUP_FIELDS, key))
        for indices in parts:
            clusters.append(Cluster(
                cluster_id=f"c{counter:04d}",
                run_ids=tuple(matrix.run_ids[i] for i in indices),
                group=group,
                threshold=threshold,
            ))
            counter += 1
    logger.info("extracted %d clusters from %d runs at threshold %.3f",
                len(clusters), len(runs), threshold)
    return clusters


def cluster_for_run(clusters, run_id: str) -> Cluster:
    for cluster in clusters:
        if run_id in cluster.run_ids:
            return cluster
    raise KeyError(f"run {run_id!r} is in no cluster")
