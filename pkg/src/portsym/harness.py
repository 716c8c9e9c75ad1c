"""Transfer experiments: samples needed per task until the model explains the
optimal 2-step plans of that task, for portable and task-specific models.

For each task the harness draws goals from the ground-truth abstract graph
and, for each goal, a start region two steps away along a shortest path. The
model is rebuilt every ``sample_step`` transitions until the mean plan
likelihood exceeds ``threshold``.

Every task has one fixed exploration stream (its seed depends only on the
experiment seed and the task index), so permutations differ only in the order
in which tasks are met. Task-specific results do not depend on the order and
are computed once per task.
"""
from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import deque
from dataclasses import asdict, dataclass, field
from itertools import islice
from pathlib import Path

import numpy as np

from .core import Dataset, iter_transitions
from .domains import make_env, task_suite
from .pipeline import (belief_from_states, ground_task, ground_task_specific, learn_portable,
                       learn_task_specific)
from .plan import plan_probability

log = logging.getLogger(__name__)

CONDITIONS = ("portable", "task-specific")


@dataclass
class ExperimentConfig:
    domain: str
    condition: str = "portable"
    num_tasks: int = 10
    sample_step: int = 250
    threshold: float = 0.75
    goals_per_task: int = 100
    permutations: int = 100
    seed: int = 0
    max_steps: int = 20
    starts_per_plan: int = 8
    particles: int = 32
    max_prior_per_option: int = 1500

    def __post_init__(self):
        if self.condition not in CONDITIONS:
            raise ValueError(f"condition must be one of {CONDITIONS}")
        for name in ("num_tasks", "sample_step", "goals_per_task", "permutations", "max_steps",
                     "starts_per_plan", "particles"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        return cls(**json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class CurvePoint:
    task: int
    cumulative_samples: float
    stderr: float


@dataclass(frozen=True)
class EvalPlan:
    start_node: int
    options: tuple[int, int]


# -- evaluation plans ----------------------------------------------------------

def _distances(graph, source: int) -> dict[int, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        n = queue.popleft()
        for _, m in graph.successors(n):
            if m not in dist:
                dist[m] = dist[n] + 1
                queue.append(m)
    return dist


def evaluation_plans(env, start_node: int, count: int, rng) -> list[EvalPlan]:
    """Optimal 2-step plans to goals drawn uniformly from the regions
    reachable from ``start_node`` that have a predecessor exactly two steps
    away."""
    graph = env.abstract_graph()
    reachable = sorted(_distances(graph, start_node))
    pairs: dict[int, list[EvalPlan]] = {}
    for s1 in reachable:
        for o1, mid in graph.successors(s1):
            for o2, goal in graph.successors(mid):
                if goal != s1 and _distances(graph, s1).get(goal) == 2:
                    pairs.setdefault(goal, []).append(EvalPlan(s1, (o1, o2)))
    goals = sorted(pairs)
    if not goals:
        raise ValueError("task has no region two steps away from another")
    plans = []
    for g in rng.choice(goals, size=count):
        options = pairs[int(g)]
        plans.append(options[int(rng.integers(len(options)))])
    return plans


def plan_likelihood(gm, env, plans: list[EvalPlan], starts_per_plan: int, particles: int, rng) -> float:
    """Mean over plans of Pr(s1 in I_o1) * Pr(s' in I_o2), s' ~ Eff(o1)."""
    total = 0.0
    for i, p in enumerate(plans):
        states = np.array([env.sample_node_state(p.start_node, rng) for _ in range(starts_per_plan)])
        Z = belief_from_states(gm, env, states)
        if (Z.labels < 0).all():
            continue
        steps = [(p.options[0], None), (p.options[1], None)]
        total += plan_probability(gm, Z, steps, particles=particles, seed=i)
    return total / len(plans)


# -- per-task runs -------------------------------------------------------------

class TaskStream:
    """Lazily collected, reproducible exploration data for one task."""

    def __init__(self, descriptor: dict, seed: int):
        self.env = make_env(descriptor, seed=seed)
        self.env.seed(seed)
        self.env.reset()
        self.start_node = self.env.node_of(self.env.state)
        self._stream = iter_transitions(self.env)
        self._transitions: list = []
        self.option_names = {o.option_id: o.name for o in self.env.options}
        # a separate simulator for evaluation so sampling never disturbs exploration
        self.eval_env = make_env(descriptor, seed=seed + 1)

    def data(self, n: int) -> Dataset:
        if n > len(self._transitions):
            self._transitions.extend(islice(self._stream, n - len(self._transitions)))
        return Dataset(tuple(self._transitions[:n]), self.env.family, 0)


def _strata(rows: list, bins: int = 4) -> dict:
    """Group records by outcome: success flag and a coarse grid cell of the end observation."""
    end = np.array([t.next_obs for t in rows], dtype=float)
    lo, span = end.min(axis=0), np.ptp(end, axis=0)
    span[span == 0] = 1.0
    cells = np.minimum((bins * (end - lo) / span).astype(int), bins - 1)
    groups: dict = {}
    for i, (t, c) in enumerate(zip(rows, cells)):
        groups.setdefault((t.success, tuple(c)), []).append(i)
    return groups


def _fair_share(sizes: list[int], cap: int) -> list[int]:
    """Split ``cap`` across groups so small groups are kept whole (water filling)."""
    take = [0] * len(sizes)
    left, open_ = cap, sorted(range(len(sizes)), key=lambda i: sizes[i])
    while open_ and left > 0:
        quota = left // len(open_)
        i = open_[0]
        if sizes[i] <= quota:
            take[i] = sizes[i]
        else:
            for j in open_:
                take[j] = quota
            for j in open_[: left - quota * len(open_)]:
                take[j] += 1
            break
        left -= take[i]
        open_.pop(0)
    return take


def _pool(prior: list[Dataset], current: Dataset, cap: int, rng) -> Dataset:
    """Prior-task data (at most ``cap`` records per option) plus the current task's.

    Subsampling is stratified by outcome so that rarely seen effects survive the cap.
    """
    if not prior:
        return current
    by_option: dict[int, list] = {}
    for ds in prior:
        for t in ds:
            by_option.setdefault(t.option_id, []).append(t)
    kept = []
    for o in sorted(by_option):
        rows = by_option[o]
        if len(rows) > cap:
            groups = list(_strata(rows).values())
            idx = []
            for members, k in zip(groups, _fair_share([len(g) for g in groups], cap)):
                idx.extend(rng.choice(members, k, replace=False).tolist())
            rows = [rows[i] for i in sorted(idx)]
        kept.extend(rows)
    return Dataset(tuple(kept) + current.transitions, current.domain_family, current.rng_seed)


def _run_task(cfg: ExperimentConfig, task: TaskStream, plans: list[EvalPlan], prior: list[Dataset],
              seed: int) -> tuple[int, Dataset]:
    """Samples needed on one task, and the data used."""
    for step in range(1, cfg.max_steps + 1):
        n = step * cfg.sample_step
        ds = task.data(n)
        rng = np.random.default_rng(seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if cfg.condition == "portable":
                pooled = _pool(prior, ds, cfg.max_prior_per_option, rng)
                model = learn_portable(pooled, task.option_names, seed=seed)
                gm = ground_task(model, ds, seed=seed)
            else:
                model = learn_task_specific(ds, task.option_names, seed=seed)
                gm = ground_task_specific(model, ds, seed=seed)
            score = plan_likelihood(gm, task.eval_env, plans, cfg.starts_per_plan, cfg.particles,
                                    np.random.default_rng(seed + 7))
        log.debug("n=%d likelihood=%.3f", n, score)
        if score > cfg.threshold:
            return n, ds
    log.warning("task did not reach threshold %.2f within %d samples", cfg.threshold, n)
    warnings.warn(f"task did not converge within {cfg.max_steps} steps; recorded at the cap")
    return n, ds


def run_transfer_samples(cfg: ExperimentConfig) -> np.ndarray:
    """Matrix of samples used, shape (permutations, num_tasks), in the order
    the tasks were met."""
    descriptors = task_suite(cfg.domain, cfg.num_tasks, cfg.seed)
    streams = [TaskStream(d, seed=10_000 * cfg.seed + 17 * i + 1) for i, d in enumerate(descriptors)]
    plans = [evaluation_plans(s.eval_env, s.start_node, cfg.goals_per_task,
                              np.random.default_rng(cfg.seed * 7919 + i)) for i, s in enumerate(streams)]
    orders = [np.random.default_rng([cfg.seed, p]).permutation(cfg.num_tasks) for p in range(cfg.permutations)]
    out = np.zeros((cfg.permutations, cfg.num_tasks), dtype=int)
    memo: dict[tuple, tuple[int, Dataset]] = {}
    for p, order in enumerate(orders):
        prior: list[Dataset] = []
        for pos, t in enumerate(order):
            # task-specific runs ignore history; portable runs depend on the tasks met before
            key = (int(t),) if cfg.condition == "task-specific" else (tuple(int(x) for x in order[: pos + 1]),)
            if key not in memo:
                memo[key] = _run_task(cfg, streams[t], plans[t], prior, seed=cfg.seed + int(t))
            n, ds = memo[key]
            out[p, pos] = n
            prior.append(ds)
            log.info("perm %d pos %d task %d: %d samples", p, pos, t, n)
    return out


def curve_from_samples(samples: np.ndarray) -> list[CurvePoint]:
    cumulative = np.cumsum(samples, axis=1)
    n = cumulative.shape[0]
    mean = cumulative.mean(axis=0)
    stderr = cumulative.std(axis=0, ddof=1) / np.sqrt(n) if n > 1 else np.zeros_like(mean)
    return [CurvePoint(i + 1, float(m), float(s)) for i, (m, s) in enumerate(zip(mean, stderr))]


def run_transfer_experiment(cfg: ExperimentConfig) -> list[CurvePoint]:
    return curve_from_samples(run_transfer_samples(cfg))


# -- output --------------------------------------------------------------------

CSV_COLUMNS = ("task", "mean_cumulative_samples", "stderr")


def write_curve(points: list[CurvePoint], path) -> None:
    if not points:
        raise ValueError("no points to write")
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for pt in points:
            w.writerow([pt.task, repr(pt.cumulative_samples), repr(pt.stderr)])


def read_curve(path) -> list[CurvePoint]:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    return [CurvePoint(int(r["task"]), float(r["mean_cumulative_samples"]), float(r["stderr"])) for r in rows]


def render_plot(points: list[CurvePoint] | dict[str, list[CurvePoint]], path) -> None:
    """Cumulative samples against task number with a shaded standard-error
    band; pass a dict to draw several conditions on one axis."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    curves = points if isinstance(points, dict) else {"": points}
    if not any(curves.values()):
        raise ValueError("no points to plot")
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, pts in curves.items():
        x = np.array([p.task for p in pts])
        y = np.array([p.cumulative_samples for p in pts])
        e = np.array([p.stderr for p in pts])
        ax.plot(x, y, marker="o", ms=3, label=name or None)
        ax.fill_between(x, y - e, y + e, alpha=0.25)
    ax.set_xlabel("Number of tasks")
    ax.set_ylabel("Cumulative samples")
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, format=Path(path).suffix.lstrip(".") or "svg")
    plt.close(fig)


def config_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)
