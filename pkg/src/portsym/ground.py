"""Grounding portable rules in one task.

Problem-space partitions of every option are split into connected start
regions; regions of different options that overlap share a label. Linking
functions count, for each rule, how often an execution from one label ends in
another. A grounded operator is a rule paired with a start label that has a
linking row.
"""
from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .core import Dataset
from .partition import (DEFAULT_EPS, DEFAULT_MIN_SAMPLES, DEFAULT_OVERLAP, EmptyPartitionError, _components,
                        cluster_effects, data_scale, dbscan_labels, overlap_score, split_starts)
from .symbols import KDE, Classifier, PortableModel, PortableRule, fit_classifier, fit_kde


# -- labels --------------------------------------------------------------------

@dataclass
class LabelDef:
    label: int
    samples: np.ndarray  # problem-space states in the region
    density: KDE  # problem-space density used for goal evaluation
    ego: KDE | None = None  # egocentric observations seen in the region

    def to_dict(self) -> dict:
        return {"label": self.label, "samples": self.samples.tolist(), "density": self.density.to_dict(),
                "ego": None if self.ego is None else self.ego.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "LabelDef":
        dens = KDE.from_dict(d["density"])
        return cls(int(d["label"]), np.asarray(d["samples"], dtype=float).reshape(-1, dens.dim), dens,
                   None if d.get("ego") is None else KDE.from_dict(d["ego"]))


@dataclass
class Labeling:
    """Label definitions plus the label of every transition's start and end
    (-1 where undefined)."""

    labels: list[LabelDef]
    scale: np.ndarray
    radius: float
    start: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    end: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def __post_init__(self):
        pts = [d.samples / self.scale for d in self.labels]
        self._ids = np.concatenate([[d.label] * len(d.samples) for d in self.labels]).astype(int) \
            if self.labels else np.zeros(0, int)
        self._tree = cKDTree(np.vstack(pts)) if self.labels else None

    def __len__(self) -> int:
        return len(self.labels)

    def assign(self, states) -> np.ndarray:
        """Label of the nearest labelled sample within ``radius`` (else -1)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if self._tree is None:
            return np.full(len(states), -1)
        dist, idx = self._tree.query(states / self.scale)
        out = np.full(len(states), -1)
        ok = dist <= self.radius
        out[ok] = self._ids[idx[ok]]
        return out

    def to_dict(self) -> dict:
        return {"scale": self.scale.tolist(), "radius": self.radius, "labels": [d.to_dict() for d in self.labels]}

    @classmethod
    def from_dict(cls, d: dict) -> "Labeling":
        return cls([LabelDef.from_dict(x) for x in d["labels"]], np.asarray(d["scale"], dtype=float),
                   float(d["radius"]))


def _region_groups(starts: list[np.ndarray], eps: float, threshold: float) -> list[list[int]]:
    """Union regions whose start sets overlap; only nearby pairs are tested."""
    centres = np.array([s.mean(axis=0) for s in starts])
    radii = np.array([np.sqrt(((s - c) ** 2).sum(axis=1)).max() for s, c in zip(starts, centres)])
    tree = cKDTree(centres)
    pairs = set()
    reach = 2 * radii.max() + eps
    for i, j in tree.query_pairs(reach):
        if np.linalg.norm(centres[i] - centres[j]) <= radii[i] + radii[j] + eps:
            if overlap_score(starts[i], starts[j], eps) > threshold:
                pairs.add((i, j))
    return _components(len(starts), sorted(pairs))


def label_problem_partitions(ds: Dataset, eps: float = DEFAULT_EPS, min_samples: int = DEFAULT_MIN_SAMPLES,
                             overlap_threshold: float = DEFAULT_OVERLAP, scale=None, noise=None,
                             max_samples: int = 200, seed: int = 0) -> Labeling:
    """Canonical problem-space partition labels for a single-task dataset."""
    if len({t.task_id for t in ds}) > 1:
        raise ValueError("label_problem_partitions expects data from a single task")
    scale = data_scale(ds, "problem") if scale is None else np.asarray(scale, dtype=float)
    radius = 1.5 * eps
    starts_all, ends_all = ds.states, ds.next_states
    regions = []
    for o in sorted(set(ds.option_ids[ds.success].tolist())) if len(ds) else []:
        try:
            parts = cluster_effects(ds, o, "problem", eps, min_samples, scale)
        except EmptyPartitionError:
            continue
        regions.extend(split_starts(parts, ds, eps, scale))
    members = [np.array(p.members) for p in regions]
    groups = _region_groups([starts_all[m] / scale for m in members], eps, overlap_threshold) if regions else []
    region_sets = [np.concatenate([members[i] for i in g]) for g in groups]
    start_sets = [starts_all[s] for s in region_sets]

    # end states far from every start region get labels of their own
    succ = np.flatnonzero(ds.success) if len(ds) else np.zeros(0, int)
    end_only = np.zeros(0, int)
    if len(succ):
        if start_sets:
            tree = cKDTree(np.vstack(start_sets) / scale)
            dist, _ = tree.query(ends_all[succ] / scale)
            end_only = succ[dist > radius]
        else:
            end_only = succ
    extra = []
    if len(end_only):
        lab = dbscan_labels(ends_all[end_only] / scale, eps, 1)
        extra = [ends_all[end_only[lab == k]] for k in np.unique(lab)]
    all_sets = start_sets + extra
    order = sorted(range(len(all_sets)), key=lambda i: tuple(np.round(all_sets[i].mean(axis=0), 9)))
    rng = np.random.default_rng(seed)
    defs = []
    for new, i in enumerate(order):
        pts = all_sets[i]
        if len(pts) > max_samples:
            pts = pts[np.sort(rng.choice(len(pts), max_samples, replace=False))]
        defs.append(LabelDef(new, pts, None))
    rank = {i: new for new, i in enumerate(order)}
    labeling = Labeling(defs, scale, radius)

    start = np.full(len(ds), -1)
    for gi, s in enumerate(region_sets):
        start[s] = rank[gi]
    end = np.full(len(ds), -1)
    if len(succ):
        end[succ] = labeling.assign(ends_all[succ])
    fail = ~ds.success if len(ds) else np.zeros(0, bool)
    if fail.any():
        start[fail] = labeling.assign(starts_all[fail])
    labeling.start, labeling.end = start, end

    # densities over all states seen in each region
    floor = 0.01 * scale if noise is None else np.maximum(noise, 0.01 * scale)
    obs_all, next_obs_all = (ds.obs, ds.next_obs) if len(ds) else (None, None)
    for d in defs:
        in_s = start == d.label
        in_e = end == d.label
        states = np.vstack([starts_all[in_s], ends_all[in_e], d.samples])
        d.density = fit_kde(states, floor=floor, max_points=max_samples, seed=seed)
        obs = np.vstack([obs_all[in_s], next_obs_all[in_e]])
        if len(obs):
            d.ego = fit_kde(obs, floor=_ego_floor(obs), max_points=max_samples, seed=seed)
    return labeling


def _ego_floor(obs: np.ndarray) -> np.ndarray:
    span = obs.max(axis=0) - obs.min(axis=0)
    return np.maximum(0.01 * np.maximum(span, 1.0), 1e-3)


def trivial_labeling(ds: Dataset) -> Labeling:
    """A single label covering the whole problem space (used when the model
    itself lives in problem space)."""
    states = ds.states
    span = states.max(axis=0) - states.min(axis=0)
    scale = np.where(span > 1e-12, span, 1.0)
    density = fit_kde(states, floor=0.01 * scale)
    lab = Labeling([LabelDef(0, density.points, density)], scale, np.inf)
    lab.start = np.zeros(len(ds), int)
    lab.end = np.where(ds.success, 0, -1)
    return lab


# -- linking -------------------------------------------------------------------

@dataclass
class LinkingFunction:
    """counts[(option_id, partition)][start label][end label]"""

    counts: dict[tuple[int, int], dict[int, dict[int, int]]] = field(default_factory=dict)

    def rows(self, option_id: int, partition: int) -> dict[int, dict[int, float]]:
        out = {}
        for ls, row in self.counts.get((option_id, partition), {}).items():
            total = sum(row.values())
            out[ls] = {le: c / total for le, c in sorted(row.items())}
        return out

    def row(self, option_id: int, partition: int, label: int) -> dict[int, float] | None:
        return self.rows(option_id, partition).get(label)

    def keys(self):
        return sorted(self.counts)

    def to_dict(self) -> dict:
        return {"rows": [{"option_id": o, "partition": p, "start": ls, "counts": {str(k): v for k, v in row.items()}}
                         for (o, p) in sorted(self.counts) for ls, row in sorted(self.counts[(o, p)].items())]}

    @classmethod
    def from_dict(cls, d: dict) -> "LinkingFunction":
        counts: dict = {}
        for r in d["rows"]:
            counts.setdefault((int(r["option_id"]), int(r["partition"])), {})[int(r["start"])] = \
                {int(k): int(v) for k, v in r["counts"].items()}
        return cls(counts)


def assign_rules(model: PortableModel, option_id: int, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Most probable rule partition of ``option_id`` for each vector, and its
    precondition score (partition -1 if the option has no rules)."""
    rules = model.rules_for(option_id)
    if not rules or len(vectors) == 0:
        return np.full(len(vectors), -1), np.zeros(len(vectors))
    scores = np.column_stack([r.precondition(vectors) for r in rules])
    best = scores.argmax(axis=1)
    return np.array([rules[b].partition for b in best]), scores.max(axis=1)


def learn_linking(ds: Dataset, labeling: Labeling, model: PortableModel, space: str = "ego") -> LinkingFunction:
    counts: dict = defaultdict(lambda: defaultdict(lambda: defaultdict(int)))
    if len(ds) == 0:
        return LinkingFunction({})
    ok = ds.success & (labeling.start >= 0) & (labeling.end >= 0)
    starts = ds.vectors(space, "start")
    for o in sorted(set(ds.option_ids[ok].tolist())):
        idx = np.flatnonzero(ok & (ds.option_ids == o))
        parts, _ = assign_rules(model, o, starts[idx])
        for i, p in zip(idx, parts):
            if p >= 0:
                counts[(o, int(p))][int(labeling.start[i])][int(labeling.end[i])] += 1
    return LinkingFunction({k: {ls: dict(row) for ls, row in v.items()} for k, v in counts.items()})


# -- grounded model ------------------------------------------------------------

@dataclass(frozen=True)
class GroundOutcome:
    probability: float
    symbols: tuple[int, ...]
    mask: tuple[int, ...]
    end_label: int


@dataclass(frozen=True)
class Operator:
    option_id: int
    partition: int
    start_label: int
    precondition: tuple[tuple[int, ...], ...]
    outcomes: tuple[GroundOutcome, ...]
    name: str = ""


@dataclass
class GroundedModel:
    portable: PortableModel
    linking: LinkingFunction
    labeling: Labeling
    goal: Classifier | None = None
    space: str = "ego"

    def __post_init__(self):
        self._goal_cache: dict[int, float] = {}
        self.operators = self._build_operators()
        self._ops = {(op.option_id, op.partition, op.start_label): op for op in self.operators}

    def _build_operators(self) -> list[Operator]:
        ops = []
        for rule in self.portable.rules:
            rows = self.linking.rows(rule.option_id, rule.partition)
            if not rows:
                continue
            for ls, row in sorted(rows.items()):
                outs = tuple(GroundOutcome(o.probability * p, o.symbols, o.mask, le)
                             for o in rule.outcomes for le, p in row.items())
                ops.append(Operator(rule.option_id, rule.partition, ls, rule.precondition.symbolic, outs,
                                    f"{rule.name}_{ls}"))
        return ops

    def operator(self, option_id: int, partition: int, label: int) -> Operator | None:
        return self._ops.get((option_id, partition, label))

    def has_rule(self, option_id: int, partition: int) -> bool:
        return any(r.option_id == option_id and r.partition == partition for r in self.portable.rules)

    def goal_probability(self, label: int, samples: int = 200, seed: int = 0) -> float:
        """Mean goal-classifier score over the label's problem-space density."""
        if self.goal is None:
            return 1.0
        if label not in self._goal_cache:
            defs = {d.label: d for d in self.labeling.labels}
            if label not in defs:
                self._goal_cache[label] = 0.0
            else:
                x = defs[label].density.sample(samples, np.random.default_rng(seed))
                self._goal_cache[label] = float(self.goal.predict_proba(x).mean())
        return self._goal_cache[label]

    def to_dict(self) -> dict:
        return {"space": self.space, "portable": self.portable.to_dict(), "linking": self.linking.to_dict(),
                "labeling": self.labeling.to_dict(), "goal": None if self.goal is None else self.goal.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundedModel":
        return cls(PortableModel.from_dict(d["portable"]), LinkingFunction.from_dict(d["linking"]),
                   Labeling.from_dict(d["labeling"]), None if d.get("goal") is None else Classifier.from_dict(d["goal"]),
                   d.get("space", "ego"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "GroundedModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_goal(states, in_goal, seed: int = 0, **kwargs) -> Classifier:
    states = np.asarray(states, dtype=float)
    in_goal = np.asarray(in_goal, dtype=bool)
    return fit_classifier(states[in_goal], states[~in_goal], seed=seed, **kwargs)


def ground_rules(model: PortableModel, linking: LinkingFunction, labeling: Labeling,
                 goal_states=None, goal_flags=None, space: str = "ego", seed: int = 0) -> GroundedModel:
    """Instantiate every rule with each start label that has a linking row."""
    for rule in model.rules:
        if not linking.rows(rule.option_id, rule.partition):
            warnings.warn(f"no linking rows for {rule.name}: operator omitted")
    goal = None
    if goal_states is not None:
        goal = fit_goal(goal_states, goal_flags, seed=seed, scale=labeling.scale)
    return GroundedModel(model, linking, labeling, goal, space)


def emit_ppddl(gm: GroundedModel) -> str:
    """PPDDL text for ``gm`` (see :mod:`portsym.ppddl`)."""
    from .ppddl import emit_ppddl as _emit
    return _emit(gm)


def parse_ppddl(text: str):
    from .ppddl import parse_ppddl as _parse
    return _parse(text)
