"""Treasure-Maze: a grid platformer with ladders, doors, levers, a key, a lock
and a treasure.

Levels are text maps shipped in ``levels/``. Legend, one character per cell:

    #  solid            .  empty           @  agent start (empty)
    H  ladder           $  treasure        k  key
    L  lock             A-E  door          a-e  lever for the door of the same letter

Lines starting with ``;`` are comments. A line ``! lock X`` binds the lock to
door ``X``. The agent stands in a passable cell whose cell below is solid, or
in the cell just above the top of a ladder, or at the bottom of a ladder.

Problem space: agent (x, y), key (x, y), treasure (x, y), one angle per lever
(sorted by letter), lock state. Carried items sit at (-1, -1). The
egocentric observation is the type code of the 3x3 neighbourhood around the
agent (row-major from top-left, see ``CODES``) followed by the bag bits
(has-key, has-treasure). Taking the treasure ends the episode: nothing can be
executed afterwards, so data collection resets to the level start.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from importlib import resources

import numpy as np

from ..core import AbstractGraph, Environment, OptionDescriptor

GO_LEFT, GO_RIGHT, UP_LADDER, DOWN_LADDER, INTERACT = range(5)

CODES = {
    "empty": 0, "solid": 1, "ladder": 2, "door-closed": 3, "door-open": 4,
    "lever-off": 5, "lever-on": 6, "key": 7, "lock": 8, "treasure": 9,
}
LEVER_OFF, LEVER_ON = -math.pi / 4, math.pi / 4
NUM_LEVELS = 10
_DOORS = "ABCDE"
_LEVERS = "abcde"


class LevelError(ValueError):
    pass


@dataclass(frozen=True)
class TreasureMazeTask:
    grid: tuple[str, ...]
    start: tuple[int, int]  # (col, row)
    lock_door: str | None = None
    jitter: float = 0.01
    name: str = ""

    @property
    def width(self) -> int:
        return len(self.grid[0])

    @property
    def height(self) -> int:
        return len(self.grid)

    @property
    def levers(self) -> tuple[str, ...]:
        return tuple(sorted({ch for row in self.grid for ch in row if ch in _LEVERS}))

    def find(self, ch: str) -> tuple[int, int] | None:
        for r, row in enumerate(self.grid):
            c = row.find(ch)
            if c >= 0:
                return c, r
        return None

    def descriptor(self) -> dict:
        return {"family": "treasure", "name": self.name, "grid": list(self.grid),
                "start": list(self.start), "lock_door": self.lock_door, "jitter": self.jitter}

    @classmethod
    def from_descriptor(cls, d: dict) -> "TreasureMazeTask":
        if "level" in d:
            return load_level(int(d["level"]))
        return cls(tuple(d["grid"]), tuple(d["start"]), d.get("lock_door"),
                   float(d.get("jitter", 0.01)), d.get("name", ""))


def parse_level(text: str, name: str = "") -> TreasureMazeTask:
    grid, lock_door = [], None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith(";") or not line.strip():
            continue
        if line.startswith("!"):
            parts = line[1:].split()
            if len(parts) != 2 or parts[0] != "lock" or parts[1] not in _DOORS:
                raise LevelError(f"{name} line {lineno}: expected '! lock <door>'")
            lock_door = parts[1]
            continue
        grid.append(line.rstrip("\n"))
    if not grid:
        raise LevelError(f"{name}: empty map")
    width = len(grid[0])
    if any(len(row) != width for row in grid):
        raise LevelError(f"{name}: ragged rows")
    legal = set("#.@H$kL") | set(_DOORS) | set(_LEVERS)
    for r, row in enumerate(grid):
        bad = set(row) - legal
        if bad:
            raise LevelError(f"{name} row {r}: unknown cells {sorted(bad)}")
    start = None
    for r, row in enumerate(grid):
        if "@" in row:
            start = (row.index("@"), r)
    if start is None:
        raise LevelError(f"{name}: no agent start '@'")
    task = TreasureMazeTask(tuple(g.replace("@", ".") for g in grid), start, lock_door, name=name)
    validate_level(task)
    return task


def validate_level(task: TreasureMazeTask) -> None:
    text = "".join(task.grid)
    for door in sorted(set(text) & set(_DOORS)):
        openers = (door.lower() in text) + (task.lock_door == door)
        if openers != 1:
            raise LevelError(f"{task.name}: door {door} has {openers} openers, expected exactly one")
    if ("L" in text) != (task.lock_door is not None) or ("L" in text) != ("k" in text):
        raise LevelError(f"{task.name}: a lock needs a key and a '! lock' binding")
    if "$" not in text:
        raise LevelError(f"{task.name}: no treasure")
    env = TreasureMazeEnv(task)
    if not env.treasure_reachable():
        raise LevelError(f"{task.name}: treasure unreachable with every door open")


def load_level(index: int) -> TreasureMazeTask:
    if not 0 <= index < NUM_LEVELS:
        raise ValueError(f"level index must be in 0..{NUM_LEVELS - 1}, got {index}")
    name = f"level_{index:02d}.txt"
    text = resources.files("portsym.domains").joinpath("levels", name).read_text()
    return parse_level(text, name=name)


@dataclass(frozen=True)
class _Discrete:
    col: int
    row: int
    levers: tuple[bool, ...]
    key_taken: bool
    unlocked: bool
    treasure_taken: bool


class TreasureMazeEnv(Environment):
    family = "treasure"
    options = (
        OptionDescriptor(GO_LEFT, "GoLeft"),
        OptionDescriptor(GO_RIGHT, "GoRight"),
        OptionDescriptor(UP_LADDER, "UpLadder"),
        OptionDescriptor(DOWN_LADDER, "DownLadder"),
        OptionDescriptor(INTERACT, "Interact"),
    )
    obs_dim = 11
    max_duration = 1000

    def __init__(self, task: TreasureMazeTask, seed: int = 0):
        self.lever_names = task.levers
        self.has_key_item = task.find("k") is not None
        self.key_cell = task.find("k")
        self.treasure_cell = task.find("$")
        self.state_dim = 6 + len(self.lever_names) + 1
        self._graph = None
        super().__init__(task, seed)

    # -- discrete <-> continuous ----------------------------------------------
    def _xy(self, col: int, row: int) -> np.ndarray:
        return np.array([col + 0.5, self.task.height - 1 - row + 0.5])

    def _cell(self, x: float, y: float) -> tuple[int, int]:
        return int(math.floor(x)), self.task.height - 1 - int(math.floor(y))

    def _encode(self, d: _Discrete, rng=None) -> np.ndarray:
        jitter = 0.0 if rng is None else self.task.jitter
        noise = (lambda: rng.normal(0.0, jitter, 2)) if rng is not None else (lambda: 0.0)
        s = np.empty(self.state_dim)
        s[0:2] = self._xy(d.col, d.row) + noise()
        if self.has_key_item and not d.key_taken:
            s[2:4] = self._xy(*self.key_cell)
        else:
            s[2:4] = -1.0
        s[4:6] = -1.0 if d.treasure_taken else self._xy(*self.treasure_cell)
        for i, on in enumerate(d.levers):
            s[6 + i] = LEVER_ON if on else LEVER_OFF
        s[-1] = 1.0 if d.unlocked else 0.0
        return s

    def _decode(self, state) -> _Discrete:
        s = np.asarray(state, dtype=float)
        col, row = self._cell(s[0], s[1])
        return _Discrete(col, row,
                         tuple(bool(a > 0) for a in s[6:6 + len(self.lever_names)]),
                         bool(self.has_key_item and s[2] < 0),
                         bool(s[-1] > 0.5),
                         bool(s[4] < 0))

    def _start(self) -> _Discrete:
        c, r = self.task.start
        return _Discrete(c, r, (False,) * len(self.lever_names), False, False, False)

    # -- map queries -----------------------------------------------------------
    def _ch(self, col: int, row: int) -> str:
        if 0 <= row < self.task.height and 0 <= col < self.task.width:
            return self.task.grid[row][col]
        return "#"

    def _door_open(self, door: str, d: _Discrete) -> bool:
        if door == self.task.lock_door:
            return d.unlocked
        lever = door.lower()
        return lever in self.lever_names and d.levers[self.lever_names.index(lever)]

    def _passable(self, col: int, row: int, d: _Discrete) -> bool:
        ch = self._ch(col, row)
        if ch == "#":
            return False
        if ch in _DOORS:
            return self._door_open(ch, d)
        return True

    def _standable(self, col: int, row: int, d: _Discrete) -> bool:
        if not self._passable(col, row, d):
            return False
        below = self._ch(col, row + 1)
        return below == "#" or (below == "H" and self._ch(col, row) != "H")

    def _feature(self, col: int, row: int, d: _Discrete) -> bool:
        """Cells where walking halts: ladder access points and interactables."""
        ch = self._ch(col, row)
        if ch == "H" or self._ch(col, row + 1) == "H":
            return True
        if ch in _LEVERS or ch == "L":
            return True
        if ch == "k":
            return not d.key_taken
        if ch == "$":
            return not d.treasure_taken
        return False

    def _code(self, col: int, row: int, d: _Discrete) -> int:
        ch = self._ch(col, row)
        if ch == "#":
            return CODES["solid"]
        if ch == "H":
            return CODES["ladder"]
        if ch in _DOORS:
            return CODES["door-open"] if self._door_open(ch, d) else CODES["door-closed"]
        if ch in _LEVERS:
            on = d.levers[self.lever_names.index(ch)]
            return CODES["lever-on"] if on else CODES["lever-off"]
        if ch == "k" and not d.key_taken:
            return CODES["key"]
        if ch == "L":
            return CODES["lock"]
        if ch == "$" and not d.treasure_taken:
            return CODES["treasure"]
        return CODES["empty"]

    def _has_key(self, d: _Discrete) -> bool:
        return d.key_taken and not d.unlocked

    # -- discrete dynamics -------------------------------------------------------
    def _step(self, d: _Discrete, option_id: int) -> tuple[_Discrete, int] | None:
        """Successor and duration, or None if the option cannot run."""
        if d.treasure_taken:
            return None
        c, r = d.col, d.row
        if option_id in (GO_LEFT, GO_RIGHT):
            dc = -1 if option_id == GO_LEFT else 1
            if not self._standable(c + dc, r, d):
                return None
            steps = 0
            while True:
                c += dc
                steps += 1
                if self._feature(c, r, d) or not self._standable(c + dc, r, d):
                    break
            return _Discrete(c, r, d.levers, d.key_taken, d.unlocked, d.treasure_taken), 10 * steps
        if option_id == UP_LADDER:
            if self._ch(c, r) != "H":
                return None
            top = r
            while self._ch(c, top - 1) == "H":
                top -= 1
            if not self._standable(c, top - 1, d):
                return None
            return _Discrete(c, top - 1, d.levers, d.key_taken, d.unlocked, d.treasure_taken), 10 * (r - top + 1)
        if option_id == DOWN_LADDER:
            if self._ch(c, r) == "H" or self._ch(c, r + 1) != "H":
                return None
            bottom = r + 1
            while self._ch(c, bottom + 1) == "H":
                bottom += 1
            return _Discrete(c, bottom, d.levers, d.key_taken, d.unlocked, d.treasure_taken), 10 * (bottom - r)
        if option_id == INTERACT:
            ch = self._ch(c, r)
            if ch in _LEVERS:
                i = self.lever_names.index(ch)
                levers = d.levers[:i] + (not d.levers[i],) + d.levers[i + 1:]
                return _Discrete(c, r, levers, d.key_taken, d.unlocked, d.treasure_taken), 5
            if ch == "k" and not d.key_taken:
                return _Discrete(c, r, d.levers, True, d.unlocked, d.treasure_taken), 5
            if ch == "L" and self._has_key(d):
                return _Discrete(c, r, d.levers, d.key_taken, True, d.treasure_taken), 5
            if ch == "$" and not d.treasure_taken:
                return _Discrete(c, r, d.levers, d.key_taken, d.unlocked, True), 5
            return None
        raise ValueError(f"unknown option {option_id}")

    # -- Environment contract ----------------------------------------------------
    def reset(self) -> None:
        self._state = self._encode(self._start(), self.rng)

    def observe(self, state=None) -> np.ndarray:
        d = self._decode(self._state if state is None else state)
        codes = [self._code(d.col + dc, d.row + dr, d) for dr in (-1, 0, 1) for dc in (-1, 0, 1)]
        return np.array(codes + [float(self._has_key(d)), float(d.treasure_taken)], dtype=float)

    def can_execute(self, option_id: int, state=None) -> bool:
        return self._step(self._decode(self._state if state is None else state), option_id) is not None

    def _run(self, option_id: int):
        d = self._decode(self._state)
        nxt, duration = self._step(d, option_id)
        s = self._encode(nxt, self.rng)
        if option_id == INTERACT:
            s[0:2] = self._state[0:2]
        # stationary items keep their jittered positions
        for sl, gone in ((slice(2, 4), nxt.key_taken), (slice(4, 6), nxt.treasure_taken)):
            if not gone:
                s[sl] = self._state[sl]
        return s, duration, -float(duration)

    def _reachable(self, start: _Discrete, step) -> tuple[list[_Discrete], dict]:
        index = {start: 0}
        order = [start]
        edges = {}
        queue = deque([start])
        while queue:
            d = queue.popleft()
            for o in self.options:
                res = step(d, o.option_id)
                if res is None:
                    continue
                nd = res[0]
                if nd not in index:
                    index[nd] = len(order)
                    order.append(nd)
                    queue.append(nd)
                edges[(index[d], o.option_id)] = index[nd]
        return order, edges

    def abstract_graph(self) -> AbstractGraph:
        if self._graph is None:
            order, edges = self._reachable(self._start(), self._step)
            self._node_index = {d: i for i, d in enumerate(order)}
            nodes = [self._encode(d) for d in order]
            names = [f"({d.col},{d.row}) levers={''.join('1' if v else '0' for v in d.levers)} "
                     f"key={int(d.key_taken)} lock={int(d.unlocked)} treasure={int(d.treasure_taken)}"
                     for d in order]
            self._graph = AbstractGraph(nodes=nodes, edges=edges, names=names)
        return self._graph

    def node_of(self, state) -> int | None:
        self.abstract_graph()
        return self._node_index.get(self._decode(state))

    def sample_node_state(self, node: int, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        graph = self.abstract_graph()
        s = graph.nodes[node].copy()
        s[0:2] += rng.normal(0.0, self.task.jitter, 2)
        return s

    def treasure_reachable(self) -> bool:
        """Whether the treasure can be taken when every door is open."""
        self._door_open = lambda door, d: True
        try:
            order, _ = self._reachable(self._start(), self._step)
        finally:
            del self._door_open
        return any(d.treasure_taken for d in order)

def make_treasure(level_index: int, seed: int = 0) -> TreasureMazeEnv:
    return TreasureMazeEnv(load_level(level_index), seed=seed)
