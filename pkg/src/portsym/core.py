"""Shared transition types, the environment contract, data collection and the
dataset file format.

Dataset files are tab-separated text. The first line is a JSON header::

    {"format": "portsym-dataset/1", "domain_family": "corridor", "rng_seed": 0,
     "state_dim": 2, "obs_dim": 3}

followed by one record per transition with the columns::

    task_id  option_id  success  duration  reward  state  obs  next_state  next_obs

Vectors are comma-separated and every float is written with ``repr`` so that a
save/load round trip is bit-exact.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

FORMAT_TAG = "portsym-dataset/1"


class DatasetParseError(ValueError):
    """Malformed dataset file."""


class DatasetValidationError(ValueError):
    """Well-formed records that violate a dataset invariant."""


@dataclass(frozen=True)
class OptionDescriptor:
    option_id: int
    name: str


@dataclass(frozen=True)
class Transition:
    """One option execution, stored as plain tuples so it is hashable and
    comparable field-for-field."""

    task_id: str
    state: tuple[float, ...]
    obs: tuple[float, ...]
    option_id: int
    success: bool
    next_state: tuple[float, ...]
    next_obs: tuple[float, ...]
    duration: int
    reward: float

    def __post_init__(self):
        if len(self.state) != len(self.next_state):
            raise DatasetValidationError("state and next_state differ in dimension")
        if len(self.obs) != len(self.next_obs):
            raise DatasetValidationError("obs and next_obs differ in dimension")
        if self.duration < 1:
            raise DatasetValidationError("duration must be a positive integer")
        if not self.success and (self.state != self.next_state or self.obs != self.next_obs):
            raise DatasetValidationError("a failed execution must leave state and obs unchanged")


@dataclass(frozen=True)
class Dataset:
    transitions: tuple[Transition, ...]
    domain_family: str
    rng_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "transitions", tuple(self.transitions))
        dims = {len(t.obs) for t in self.transitions}
        if len(dims) > 1:
            raise DatasetValidationError(f"mixed observation dimensions {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.transitions)

    def __iter__(self) -> Iterator[Transition]:
        return iter(self.transitions)

    def __getitem__(self, i):
        return self.transitions[i]

    @cached_property
    def states(self) -> np.ndarray:
        return _stack([t.state for t in self.transitions])

    @cached_property
    def next_states(self) -> np.ndarray:
        return _stack([t.next_state for t in self.transitions])

    @cached_property
    def obs(self) -> np.ndarray:
        return _stack([t.obs for t in self.transitions])

    @cached_property
    def next_obs(self) -> np.ndarray:
        return _stack([t.next_obs for t in self.transitions])

    @cached_property
    def option_ids(self) -> np.ndarray:
        return np.array([t.option_id for t in self.transitions], dtype=int)

    @cached_property
    def success(self) -> np.ndarray:
        return np.array([t.success for t in self.transitions], dtype=bool)

    def vectors(self, space: str, which: str = "start") -> np.ndarray:
        """Start or effect vectors in ``space`` ("ego" or "problem")."""
        if space not in ("ego", "problem"):
            raise ValueError(f"unknown space {space!r}")
        if which == "start":
            return self.obs if space == "ego" else self.states
        if which == "effect":
            return self.next_obs if space == "ego" else self.next_states
        raise ValueError(f"unknown vector kind {which!r}")

    def concat(self, other: "Dataset") -> "Dataset":
        if other.domain_family != self.domain_family:
            raise DatasetValidationError("cannot concatenate datasets of different families")
        return Dataset(self.transitions + other.transitions, self.domain_family, self.rng_seed)

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.transitions[i] for i in indices), self.domain_family, self.rng_seed)


def _stack(rows) -> np.ndarray:
    if not rows:
        return np.zeros((0, 0))
    return np.asarray(rows, dtype=float)


class Environment:
    """Base class for a simulated task.

    Subclasses define ``family``, ``options`` and the option dynamics. The
    environment owns its RNG; :meth:`seed` resets it so collection is
    reproducible from (task descriptor, seed).
    """

    family: str = ""
    options: tuple[OptionDescriptor, ...] = ()
    obs_dim: int = 0
    state_dim: int = 0
    max_duration: int = 10_000

    def __init__(self, task, seed: int = 0):
        self.task = task
        self.task_id = task_id_of(task)
        self.seed(seed)
        self.reset()

    def seed(self, seed: int) -> None:
        self.rng = np.random.default_rng(seed)

    # -- state ---------------------------------------------------------------
    @property
    def state(self) -> np.ndarray:
        return self._state.copy()

    def set_state(self, state) -> None:
        self._state = np.array(state, dtype=float)

    def reset(self) -> None:
        raise NotImplementedError

    def observe(self, state=None) -> np.ndarray:
        """Egocentric observation of ``state`` (default: current state)."""
        raise NotImplementedError

    # -- options -------------------------------------------------------------
    def can_execute(self, option_id: int, state=None) -> bool:
        raise NotImplementedError

    def _run(self, option_id: int) -> tuple[np.ndarray, int, float]:
        """Run the option controller from the current state; returns
        (next state, duration, reward)."""
        raise NotImplementedError

    def execute(self, option_id: int) -> tuple[bool, int, float]:
        """Execute an option. A non-initiable option fails without touching
        the state."""
        if not self.can_execute(option_id):
            return False, 1, 0.0
        nxt, duration, reward = self._run(option_id)
        if not 1 <= duration <= self.max_duration:
            raise RuntimeError(f"option {option_id} ran for {duration} steps (cap {self.max_duration})")
        self._state = nxt
        return True, duration, reward

    def option_name(self, option_id: int) -> str:
        return self.options[option_id].name

    def option_id(self, name: str) -> int:
        for o in self.options:
            if o.name == name:
                return o.option_id
        raise KeyError(name)

    # -- ground truth used by evaluation ------------------------------------
    def abstract_graph(self) -> "AbstractGraph":
        raise NotImplementedError

    def node_of(self, state) -> int | None:
        """Index of the analytic region containing ``state`` (None if none)."""
        raise NotImplementedError

    def sample_node_state(self, node: int, rng=None) -> np.ndarray:
        raise NotImplementedError


@dataclass
class AbstractGraph:
    """Ground-truth abstract transition graph of a task: analytic regions
    (nodes) and deterministic option edges between them."""

    nodes: list[np.ndarray]
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    names: list[str] = field(default_factory=list)

    def successors(self, node: int) -> list[tuple[int, int]]:
        return sorted((o, dst) for (src, o), dst in self.edges.items() if src == node)


def task_id_of(task) -> str:
    """Short stable identifier derived from a task descriptor."""
    desc = task.descriptor() if hasattr(task, "descriptor") else task
    text = json.dumps(desc, sort_keys=True, default=float)
    return hashlib.sha1(text.encode()).hexdigest()[:12]


def iter_transitions(env: Environment, explore: str = "all") -> Iterator[Transition]:
    """Endless stream of uniformly random option executions from ``env``.

    ``explore="all"`` draws from every option and records non-initiable draws
    as failures (the negatives for precondition learning); ``"initiable"``
    draws only among options that can run. When nothing can run the
    environment is reset and no record is emitted.
    """
    if explore not in ("all", "initiable"):
        raise ValueError(f"unknown exploration mode {explore!r}")
    n_opt = len(env.options)
    while True:
        runnable = [o.option_id for o in env.options if env.can_execute(o.option_id)]
        if not runnable:
            env.reset()
            continue
        if explore == "all":
            option = env.options[int(env.rng.integers(n_opt))].option_id
        else:
            option = runnable[int(env.rng.integers(len(runnable)))]
        state = env.state
        obs = env.observe()
        ok, duration, reward = env.execute(option)
        if ok:
            next_state = env.state
            next_obs = env.observe()
        else:
            next_state, next_obs = state, obs
        yield Transition(
            task_id=env.task_id,
            state=tuple(map(float, state)),
            obs=tuple(map(float, obs)),
            option_id=int(option),
            success=bool(ok),
            next_state=tuple(map(float, next_state)),
            next_obs=tuple(map(float, next_obs)),
            duration=int(duration),
            reward=float(reward),
        )


def collect(env: Environment, budget: int, seed: int, explore: str = "all") -> Dataset:
    """Gather exactly ``budget`` transitions by uniformly random exploration.

    The environment is reseeded and reset first, so the result depends only
    on (task descriptor, seed).
    """
    if budget < 0:
        raise ValueError("budget must be non-negative")
    env.seed(seed)
    env.reset()
    stream = iter_transitions(env, explore)
    transitions = tuple(next(stream) for _ in range(budget))
    return Dataset(transitions, env.family, seed)


# -- serialization -----------------------------------------------------------

def _fmt_vec(v) -> str:
    return ",".join(repr(float(x)) for x in v)


def save(ds: Dataset, path) -> None:
    path = Path(path)
    header = {
        "format": FORMAT_TAG,
        "domain_family": ds.domain_family,
        "rng_seed": ds.rng_seed,
        "state_dim": len(ds[0].state) if len(ds) else None,
        "obs_dim": len(ds[0].obs) if len(ds) else None,
    }
    with path.open("w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t in ds:
            row = [
                t.task_id.replace("\t", " "),
                str(t.option_id),
                "1" if t.success else "0",
                str(t.duration),
                repr(float(t.reward)),
                _fmt_vec(t.state),
                _fmt_vec(t.obs),
                _fmt_vec(t.next_state),
                _fmt_vec(t.next_obs),
            ]
            fh.write("\t".join(row) + "\n")


def _parse_vec(text: str, lineno: int, column: str) -> tuple[float, ...]:
    if text == "":
        return ()
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise DatasetParseError(f"line {lineno}: bad number in column {column!r}: {exc}") from None


def load(path) -> Dataset:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise DatasetParseError("line 1: missing header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetParseError(f"line 1: header is not JSON ({exc.msg})") from None
    if header.get("format") != FORMAT_TAG or "domain_family" not in header:
        raise DatasetParseError(f"line 1: expected a {FORMAT_TAG} header")
    state_dim, obs_dim = header.get("state_dim"), header.get("obs_dim")
    transitions = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 9:
            raise DatasetParseError(f"line {lineno}: expected 9 tab-separated columns, got {len(cols)}")
        task_id, option_id, success, duration, reward = cols[:5]
        try:
            option_id_i, duration_i = int(option_id), int(duration)
            reward_f = float(reward)
        except ValueError as exc:
            raise DatasetParseError(f"line {lineno}: {exc}") from None
        if success not in ("0", "1"):
            raise DatasetParseError(f"line {lineno}: success flag must be 0 or 1, got {success!r}")
        state = _parse_vec(cols[5], lineno, "state")
        obs = _parse_vec(cols[6], lineno, "obs")
        next_state = _parse_vec(cols[7], lineno, "next_state")
        next_obs = _parse_vec(cols[8], lineno, "next_obs")
        record = len(transitions) + 1
        if state_dim is None:
            state_dim = len(state)
        if obs_dim is None:
            obs_dim = len(obs)
        for name, vec, dim in (("state", state, state_dim), ("next_state", next_state, state_dim),
                               ("obs", obs, obs_dim), ("next_obs", next_obs, obs_dim)):
            if len(vec) != dim:
                raise DatasetValidationError(
                    f"line {lineno} (record {record}): {name} has length {len(vec)}, expected {dim}")
        try:
            transitions.append(Transition(task_id, state, obs, option_id_i, success == "1",
                                          next_state, next_obs, duration_i, reward_f))
        except DatasetValidationError as exc:
            raise DatasetValidationError(f"line {lineno} (record {record}): {exc}") from None
    return Dataset(tuple(transitions), header["domain_family"], int(header.get("rng_seed", 0)))
