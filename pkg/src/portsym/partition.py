"""Partitioning options into approximately-subgoal pieces.

Effect vectors of one option are clustered with DBSCAN; partitions whose
start vectors overlap are then merged. A merged partition keeps the effect
clusters it was built from as its outcomes. Distances are Euclidean after
dividing every variable by its range over the whole dataset, so ``eps`` is a
fraction of the data range.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist
from sklearn.cluster import DBSCAN

from .core import Dataset

DEFAULT_EPS = 0.1
DEFAULT_MIN_SAMPLES = 5
DEFAULT_OVERLAP = 0.1


class EmptyPartitionError(ValueError):
    """No successful transitions to partition."""


@dataclass(frozen=True)
class Partition:
    option_id: int
    partition_index: int
    members: tuple[int, ...]
    space: str
    outcomes: tuple[int, ...] = ()  # effect-cluster index of each member

    def __post_init__(self):
        if not self.outcomes:
            object.__setattr__(self, "outcomes", (0,) * len(self.members))
        if len(self.outcomes) != len(self.members):
            raise ValueError("one outcome index per member required")

    @property
    def num_outcomes(self) -> int:
        return len(set(self.outcomes))

    def outcome_members(self, k: int) -> tuple[int, ...]:
        return tuple(m for m, o in zip(self.members, self.outcomes) if o == k)


def data_scale(ds: Dataset, space: str) -> np.ndarray:
    """Per-variable range over all start and effect vectors (1 where constant)."""
    allv = np.vstack([ds.vectors(space, "start"), ds.vectors(space, "effect")])
    span = allv.max(axis=0) - allv.min(axis=0)
    return np.where(span > 1e-12, span, 1.0)


def dbscan_labels(x: np.ndarray, eps: float, min_samples: int, noise: str = "attach") -> np.ndarray:
    """DBSCAN over the rows of ``x``. Duplicate rows are collapsed (weighted)
    and visited in sorted order, so the result does not depend on row order.

    Noise points are attached to the cluster of the nearest clustered point, or
    labelled -1 if ``noise == "discard"``. If no point is a core point, the
    connected components at ``eps`` are used instead.
    """
    if noise not in ("attach", "discard"):
        raise ValueError(f"unknown noise policy {noise!r}")
    uniq, inverse, counts = np.unique(x, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    labels = DBSCAN(eps=eps, min_samples=min_samples).fit(uniq, sample_weight=counts).labels_
    if (labels < 0).all():
        labels = DBSCAN(eps=eps, min_samples=1).fit(uniq).labels_
    noisy = labels < 0
    if noisy.any() and noise == "attach":
        tree = cKDTree(uniq[~noisy])
        _, nearest = tree.query(uniq[noisy])
        labels = labels.copy()
        labels[noisy] = labels[~noisy][nearest]
    return labels[inverse]


def _canonical_order(groups: list[np.ndarray], vectors: np.ndarray) -> list[int]:
    """Indices of ``groups`` sorted by the lexicographic order of their centroids."""
    keys = [tuple(np.round(vectors[g].mean(axis=0), 9)) for g in groups]
    return sorted(range(len(groups)), key=lambda i: keys[i])


def cluster_effects(ds: Dataset, option_id: int, space: str = "ego", eps: float = DEFAULT_EPS,
                    min_samples: int = DEFAULT_MIN_SAMPLES, scale=None,
                    noise: str = "attach") -> list[Partition]:
    """One partition per effect cluster of ``option_id``'s successful transitions."""
    if eps <= 0 or min_samples < 1:
        raise ValueError("eps must be positive and min_samples at least 1")
    idx = np.flatnonzero((ds.option_ids == option_id) & ds.success) if len(ds) else np.array([], int)
    if idx.size == 0:
        raise EmptyPartitionError(f"option {option_id} has no successful transitions")
    scale = data_scale(ds, space) if scale is None else np.asarray(scale, dtype=float)
    effects = ds.vectors(space, "effect")[idx]
    labels = dbscan_labels(effects / scale, eps, min_samples, noise)
    groups = [idx[labels == k] for k in np.unique(labels) if k >= 0]
    order = _canonical_order([np.searchsorted(idx, g) for g in groups], effects)
    return [Partition(option_id, i, tuple(int(m) for m in groups[j]), space) for i, j in enumerate(order)]


def _starts(ds: Dataset, part: Partition, scale) -> np.ndarray:
    return ds.vectors(part.space, "start")[list(part.members)] / scale


def overlap_score(a: np.ndarray, b: np.ndarray, eps: float) -> float:
    """Mean of the fraction of ``a`` within ``eps`` of ``b`` and vice versa."""
    if len(a) == 0 or len(b) == 0:
        return 0.0
    da, _ = cKDTree(b).query(a, distance_upper_bound=eps * (1 + 1e-9))
    db, _ = cKDTree(a).query(b, distance_upper_bound=eps * (1 + 1e-9))
    return 0.5 * (np.isfinite(da).mean() + np.isfinite(db).mean())


def _union(parts: list[Partition], groups: list[list[int]], ds: Dataset, space: str) -> list[Partition]:
    """Combine ``parts`` along ``groups``, keeping effect clusters as outcomes,
    and renumber canonically."""
    effects = ds.vectors(space, "effect")
    merged = []
    for g in groups:
        # outcome clusters of the merged partition, each identified by its source
        clusters = []
        for i in g:
            p = parts[i]
            for k in sorted(set(p.outcomes)):
                clusters.append(np.array(p.outcome_members(k)))
        corder = _canonical_order(clusters, effects)
        members, outcomes = [], []
        for new_k, j in enumerate(corder):
            members.extend(int(m) for m in clusters[j])
            outcomes.extend([new_k] * len(clusters[j]))
        perm = np.argsort(members, kind="stable")
        merged.append((np.array(members)[perm], np.array(outcomes)[perm], [clusters[j] for j in corder]))
    # canonical order of partitions: by their first (smallest) outcome centroid
    keys = [tuple(tuple(np.round(effects[c].mean(axis=0), 9)) for c in cl) for _, _, cl in merged]
    order = sorted(range(len(merged)), key=lambda i: keys[i])
    option_id = parts[0].option_id if parts else -1
    return [Partition(option_id, new_i, tuple(int(m) for m in merged[i][0]), space,
                      tuple(int(o) for o in merged[i][1])) for new_i, i in enumerate(order)]


def _components(n: int, pairs) -> list[list[int]]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def merge_overlapping(parts: list[Partition], ds: Dataset, overlap_threshold: float = DEFAULT_OVERLAP,
                      eps: float = DEFAULT_EPS, scale=None) -> list[Partition]:
    """Union partitions whose start sets overlap by more than
    ``overlap_threshold``, repeated until nothing changes."""
    if not parts:
        return []
    space = parts[0].space
    if any(p.space != space or p.option_id != parts[0].option_id for p in parts):
        raise ValueError("all partitions must share one option and space")
    scale = data_scale(ds, space) if scale is None else np.asarray(scale, dtype=float)
    current = list(parts)
    while True:
        starts = [_starts(ds, p, scale) for p in current]
        pairs = [(i, j) for i in range(len(current)) for j in range(i + 1, len(current))
                 if overlap_score(starts[i], starts[j], eps) > overlap_threshold]
        groups = _components(len(current), pairs)
        merged = _union(current, groups, ds, space)
        if len(merged) == len(current):
            return merged
        current = merged


def split_starts(parts: list[Partition], ds: Dataset, eps: float = DEFAULT_EPS, scale=None) -> list[Partition]:
    """Split each partition so its start vectors form one connected component
    at ``eps``. Used for problem-space labels, where a partition must name one
    region of the task."""
    out = []
    for p in parts:
        scale_ = data_scale(ds, p.space) if scale is None else np.asarray(scale, dtype=float)
        labels = dbscan_labels(_starts(ds, p, scale_), eps, 1)
        members = np.array(p.members)
        outcomes = np.array(p.outcomes)
        for k in np.unique(labels):
            sel = labels == k
            out.append(Partition(p.option_id, 0, tuple(int(m) for m in members[sel]), p.space,
                                 tuple(int(o) for o in outcomes[sel])))
    starts = ds.vectors(parts[0].space, "start") if parts else None
    order = _canonical_order([np.array(p.members) for p in out], starts) if out else []
    return [Partition(out[j].option_id, i, out[j].members, out[j].space, out[j].outcomes)
            for i, j in enumerate(order)]


def partition_option(ds: Dataset, option_id: int, space: str = "ego", eps: float = DEFAULT_EPS,
                     min_samples: int = DEFAULT_MIN_SAMPLES, overlap_threshold: float = DEFAULT_OVERLAP,
                     scale=None, noise: str = "attach") -> list[Partition]:
    scale = data_scale(ds, space) if scale is None else scale
    parts = cluster_effects(ds, option_id, space, eps, min_samples, scale, noise)
    return merge_overlapping(parts, ds, overlap_threshold, eps, scale)


def partition_all(ds: Dataset, space: str = "ego", **kwargs) -> list[Partition]:
    """Merged partitions of every option with at least one success, ordered
    by option then partition index."""
    out = []
    for o in sorted(set(ds.option_ids[ds.success].tolist())) if len(ds) else []:
        out.extend(partition_option(ds, o, space, **kwargs))
    return out


def check_subgoal(part: Partition, ds: Dataset, min_samples: int = DEFAULT_MIN_SAMPLES,
                  permutations: int = 200, seed: int = 0, max_members: int = 300) -> float:
    """Permutation p-value for dependence of effects on starts.

    Members are split at the median of their projection onto the first
    principal direction of the start vectors; the energy distance between the
    two halves' effect sets is compared against random splits. A high p-value
    means the effects look independent of where the option started.
    """
    n = len(part.members)
    if n < 2 * min_samples:
        raise ValueError(f"partition has {n} members, need at least {2 * min_samples}")
    rng = np.random.default_rng(seed)
    members = np.array(part.members)
    if n > max_members:
        members = np.sort(rng.choice(members, max_members, replace=False))
        n = max_members
    starts = ds.vectors(part.space, "start")[members]
    effects = ds.vectors(part.space, "effect")[members]
    centered = starts - starts.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    order = np.argsort(centered @ vt[0], kind="stable")
    half = np.zeros(n, dtype=bool)
    half[order[: n // 2]] = True
    dist = cdist(effects, effects)

    def stat(mask):
        a, b = mask, ~mask
        return 2 * dist[np.ix_(a, b)].mean() - dist[np.ix_(a, a)].mean() - dist[np.ix_(b, b)].mean()

    observed = stat(half)
    exceed = sum(stat(rng.permutation(half)) >= observed - 1e-12 for _ in range(permutations))
    return float((exceed + 1) / (permutations + 1))


# -- partition files -------------------------------------------------------------

def save_partitions(parts: list[Partition], path) -> None:
    rows = [{"option_id": p.option_id, "label": p.partition_index, "space": p.space,
             "members": list(p.members), "outcomes": list(p.outcomes)} for p in parts]
    Path(path).write_text(json.dumps({"partitions": rows}, indent=1))


def load_partitions(path) -> list[Partition]:
    rows = json.loads(Path(path).read_text())["partitions"]
    return [Partition(r["option_id"], r["label"], tuple(r["members"]), r["space"], tuple(r["outcomes"]))
            for r in rows]
