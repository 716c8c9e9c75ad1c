"""Plan evaluation and search over (observation, partition label) beliefs.

A belief is a weighted particle set. Executing a plan step scores every
particle with the precondition of the best applicable rule, conditions on
success, moves the label along the linking row and draws an outcome that
overwrites the outcome's masked variables, favouring outcomes whose result
looks like the new label.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .core import Environment
from .ground import GroundedModel

DEFAULT_PARTICLES = 256
PROB_FLOOR = 0.75

Step = tuple[int, "int | None"]  # (option_id, rule partition or None for "any partition")


class MissingOperatorError(KeyError):
    pass


@dataclass
class BeliefState:
    obs: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        self.labels = np.asarray(self.labels, dtype=int).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(self.obs) or len(self.labels) != len(self.obs):
            raise ValueError("obs, labels and weights must have equal length")
        if w.sum() <= 0:
            raise ValueError("weights must have positive mass")
        self.weights = w / w.sum()

    @classmethod
    def uniform(cls, obs, labels) -> "BeliefState":
        obs = np.atleast_2d(np.asarray(obs, dtype=float))
        labels = np.broadcast_to(np.asarray(labels, dtype=int), (len(obs),))
        return cls(obs, labels, np.ones(len(obs)))


@dataclass
class Plan:
    steps: list[Step]
    probability: float = 0.0
    names: list[str] = field(default_factory=list)


def _resample(belief_obs, labels, weights, n, rng):
    """Systematic resampling to ``n`` equally weighted particles."""
    positions = (rng.random() + np.arange(n)) / n
    idx = np.searchsorted(np.cumsum(weights), positions)
    idx = np.minimum(idx, len(weights) - 1)
    return belief_obs[idx].copy(), labels[idx].copy(), np.full(n, 1.0 / n)


def _step_scores(gm: GroundedModel, option_id: int, partition, obs, labels):
    """Per-particle score of the best applicable rule and that rule's index."""
    rules = [r for r in gm.portable.rules_for(option_id) if partition is None or r.partition == partition]
    if partition is not None and not rules:
        raise MissingOperatorError(f"no operator for option {option_id} partition {partition}")
    if partition is not None and not any(gm.linking.rows(option_id, partition).values()):
        raise MissingOperatorError(f"no grounded operator for option {option_id} partition {partition}")
    scores = np.zeros((len(obs), max(len(rules), 1)))
    for j, r in enumerate(rules):
        rows = gm.linking.rows(r.option_id, r.partition)
        linked = np.array([lab in rows for lab in labels])
        if linked.any():
            scores[linked, j] = r.precondition(obs[linked])
    best = scores.argmax(axis=1)
    return scores[np.arange(len(obs)), best], best, rules


def _profiles(gm: GroundedModel) -> dict:
    return {d.label: d.ego for d in gm.labeling.labels if d.ego is not None}


def _advance(gm: GroundedModel, rules, best, obs, labels, rng, reweight: bool = True):
    """Move every particle through its rule: draw the next label from the
    linking row, then an outcome.

    With ``reweight``, outcome k is drawn with probability proportional to
    p_k * f_l(x_k), where x_k is the observation after applying outcome k and
    f_l the observation profile of the next label l; the particle's weight is
    multiplied by the normaliser sum_k p_k f_l(x_k). This is the Bayes
    correction for observations the label makes implausible.
    """
    vocab = gm.portable.vocabulary
    profiles = _profiles(gm) if reweight else {}
    obs, labels = obs.copy(), labels.copy()
    logw = np.zeros(len(obs))
    for j, rule in enumerate(rules):
        sel = np.flatnonzero(best == j)
        if len(sel) == 0:
            continue
        table = gm.linking.rows(rule.option_id, rule.partition)
        for i in sel:
            row = table.get(int(labels[i]))
            if row is None:
                continue
            ends = list(row)
            labels[i] = ends[rng.choice(len(ends), p=np.array([row[e] for e in ends]))] if len(ends) > 1 else ends[0]
        if not rule.outcomes:
            continue
        probs = np.array([o.probability for o in rule.outcomes])
        probs = probs / probs.sum()
        # candidate observations, one per outcome
        cand = np.repeat(obs[sel][None], len(probs), axis=0)
        for k, outcome in enumerate(rule.outcomes):
            for sid in outcome.symbols:
                sym = vocab[sid]
                cand[k][:, list(sym.mask)] = sym.density.sample(len(sel), rng)
        loglik = np.zeros((len(probs), len(sel)))
        if profiles:
            for lab in np.unique(labels[sel]):
                rows = labels[sel] == lab
                prof = profiles.get(int(lab))
                for k in range(len(probs)):
                    loglik[k, rows] = prof.logpdf(cand[k][rows]) if prof is not None else np.log(1e-300)
        logjoint = np.log(probs)[:, None] + loglik
        top = logjoint.max(axis=0)
        post = np.exp(logjoint - top)
        norm = post.sum(axis=0)
        for c, i in enumerate(sel):
            k = rng.choice(len(probs), p=post[:, c] / norm[c]) if len(probs) > 1 else 0
            obs[i] = cand[k][c]
        logw[sel] = np.log(norm) + top
    return obs, labels, logw


def _normalise(weights, logw):
    finite = np.isfinite(logw)
    if not finite.any():
        return weights
    w = weights * np.exp(np.where(finite, logw - logw[finite].max(), -np.inf))
    return weights if w.sum() <= 0 else w / w.sum()


def plan_probability(gm: GroundedModel, Z: BeliefState, plan: Sequence[Step], goal: bool = False,
                     particles: int = DEFAULT_PARTICLES, seed: int = 0, reweight: bool = True) -> float:
    """Probability that every step of ``plan`` can be executed from ``Z`` (and,
    with ``goal``, that the final state lies in the goal)."""
    rng = np.random.default_rng(seed)
    obs, labels, weights = _resample(Z.obs, Z.labels, Z.weights, particles, rng)
    prob = 1.0
    for option_id, partition in plan:
        score, best, rules = _step_scores(gm, option_id, partition, obs, labels)
        step = float(np.dot(weights, score))
        prob *= step
        if prob <= 0.0:
            return 0.0
        weights = weights * score / step
        obs, labels, logw = _advance(gm, rules, best, obs, labels, rng, reweight)
        weights = _normalise(weights, logw)
        obs, labels, weights = _resample(obs, labels, weights, particles, rng)
    if goal:
        prob *= float(sum(w * gm.goal_probability(int(l)) for w, l in zip(weights, labels)))
    return float(min(max(prob, 0.0), 1.0))


def monte_carlo_success(env: Environment, options: Sequence[int], rollouts: int, seed: int = 0,
                        start: Callable | np.ndarray | None = None,
                        goal: Callable[[np.ndarray], bool] | None = None) -> float:
    """Fraction of simulated rollouts in which every option initiates (and the
    final state satisfies ``goal`` when given).

    ``start`` is either a callable ``rng -> state``, an array of candidate
    start states drawn uniformly, or None to use the environment's reset.
    """
    if rollouts < 1:
        raise ValueError("rollouts must be at least 1")
    env.seed(seed)
    rng = np.random.default_rng(seed + 1)
    wins = 0
    for _ in range(rollouts):
        if start is None:
            env.reset()
        elif callable(start):
            env.set_state(start(rng))
        else:
            arr = np.atleast_2d(start)
            env.set_state(arr[rng.integers(len(arr))])
        ok = True
        for o in options:
            if not env.execute(o)[0]:
                ok = False
                break
        if ok and goal is not None:
            ok = bool(goal(env.state))
        wins += ok
    return wins / rollouts


def _candidate_steps(gm: GroundedModel) -> list[Step]:
    return sorted({(op.option_id, op.partition) for op in gm.operators})


def search_plan(gm: GroundedModel, Z: BeliefState, goal: bool = True, max_depth: int = 4,
                prob_floor: float = PROB_FLOOR, particles: int = DEFAULT_PARTICLES, seed: int = 0) -> Plan | None:
    """Best-first search for the most probable plan reaching the goal.

    Queue entries are partial plans keyed by running probability, an upper
    bound on any extension, so the first completed plan popped is the best
    one found within ``max_depth``. Steps whose conditional probability falls
    below ``prob_floor`` are not expanded.
    """
    if max_depth < 0 or not 0.0 <= prob_floor <= 1.0:
        raise ValueError("max_depth must be >= 0 and prob_floor in [0, 1]")
    evaluate = lambda steps, g: plan_probability(gm, Z, steps, goal=g, particles=particles, seed=seed)
    steps_all = _candidate_steps(gm)
    # entries: (-probability, is_incomplete, steps)
    queue = [(-1.0, 1, ())]
    while queue:
        neg_p, incomplete, steps = heapq.heappop(queue)
        if not incomplete:
            return Plan(list(steps), -neg_p, _step_names(gm, steps))
        running = -neg_p
        final = evaluate(list(steps), goal) if goal else running
        if final >= prob_floor:
            heapq.heappush(queue, (-final, 0, steps))
        if len(steps) >= max_depth:
            continue
        for step in steps_all:
            p = evaluate(list(steps) + [step], False)
            if running > 0 and p / running >= prob_floor and p >= prob_floor:
                heapq.heappush(queue, (-p, 1, steps + (step,)))
    return None


def _step_names(gm: GroundedModel, steps) -> list[str]:
    names = gm.portable.option_names
    return [f"{names.get(o, f'option{o}')}_{p}" if p is not None else names.get(o, f"option{o}") for o, p in steps]
