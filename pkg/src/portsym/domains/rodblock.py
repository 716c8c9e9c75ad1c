"""Rod-and-Block: a rod slides along a walled track and can be rotated between
pointing up and pointing down. Blocks on the track impede the rod only in
some orientations.

Problem space is (x, theta). The egocentric observation is the one-hot type
of the nearest obstacle within one rod length to the left, the same for the
right, and the (noisy) angle:

    [left: none wall block-down block-up block-both | right: ... | theta]
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import AbstractGraph, Environment, OptionDescriptor

GO_LEFT, GO_RIGHT, ROTATE_UP_CW, ROTATE_UP_ACW, ROTATE_DOWN_CW, ROTATE_DOWN_ACW = range(6)

KINDS = ("blocks-down", "blocks-up", "blocks-both")
NEIGHBOR_TYPES = ("none", "wall", "block-down", "block-up", "block-both")
_TYPE_OF_KIND = {"wall": 1, "blocks-down": 2, "blocks-up": 3, "blocks-both": 4}

UP, DOWN = math.pi / 2, -math.pi / 2
SPEED = 0.05
MIN_GAP = 2.5  # minimum face-to-face clearance, in rod lengths


@dataclass(frozen=True)
class RodBlockTask:
    blocks: tuple[tuple[float, str], ...]
    track_length: float = 18.0
    rod_length: float = 1.0
    block_width: float = 1.0
    noise: float | None = None  # position sigma; default 1% of rod length

    def __post_init__(self):
        lo, hi = self.walls
        faces = [(lo, lo)] + sorted((c - self.block_width / 2, c + self.block_width / 2)
                                    for c, _ in self.blocks) + [(hi, hi)]
        for (_, right), (left, _) in zip(faces, faces[1:]):
            if left - right <= self.rod_length:
                raise ValueError("blocks must lie inside the walls, separated by more than the rod length")
        for _, kind in self.blocks:
            if kind not in KINDS:
                raise ValueError(f"unknown block kind {kind!r}")

    @property
    def walls(self) -> tuple[float, float]:
        return (0.0, self.track_length)

    @property
    def position_noise(self) -> float:
        return 0.01 * self.rod_length if self.noise is None else self.noise

    @property
    def angle_noise(self) -> float:
        return 0.01 * math.pi

    def descriptor(self) -> dict:
        return {
            "family": "rodblock",
            "blocks": [[float(c), k] for c, k in self.blocks],
            "track_length": self.track_length,
            "rod_length": self.rod_length,
            "block_width": self.block_width,
            "noise": self.noise,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "RodBlockTask":
        return cls(
            blocks=tuple((float(c), str(k)) for c, k in d["blocks"]),
            track_length=float(d.get("track_length", 18.0)),
            rod_length=float(d.get("rod_length", 1.0)),
            block_width=float(d.get("block_width", 1.0)),
            noise=d.get("noise"),
        )


def _impedes(kind: str, theta: float) -> bool:
    if kind in ("wall", "blocks-both"):
        return True
    return (kind == "blocks-up") == (theta > 0)


class RodBlockEnv(Environment):
    family = "rodblock"
    options = (
        OptionDescriptor(GO_LEFT, "GoLeft"),
        OptionDescriptor(GO_RIGHT, "GoRight"),
        OptionDescriptor(ROTATE_UP_CW, "RotateUpClockwise"),
        OptionDescriptor(ROTATE_UP_ACW, "RotateUpAnticlockwise"),
        OptionDescriptor(ROTATE_DOWN_CW, "RotateDownClockwise"),
        OptionDescriptor(ROTATE_DOWN_ACW, "RotateDownAnticlockwise"),
    )
    obs_dim = 11
    state_dim = 2

    def __init__(self, task: RodBlockTask, seed: int = 0):
        lo, hi = task.walls
        w = task.block_width / 2
        # (left face, right face, kind)
        self.obstacles = [(-math.inf, lo, "wall")]
        self.obstacles += [(c - w, c + w, k) for c, k in sorted(task.blocks)]
        self.obstacles += [(hi, math.inf, "wall")]
        self.gap = 0.25 * task.rod_length
        stops = []
        for left, right, _ in self.obstacles:
            if math.isfinite(left):
                stops.append(left - self.gap)
            if math.isfinite(right):
                stops.append(right + self.gap)
        self.stops = np.array(sorted(stops))
        super().__init__(task, seed)

    # nodes are (stop index, orientation) with orientation 0 = down, 1 = up
    def _node_state(self, node: int) -> np.ndarray:
        return np.array([self.stops[node // 2], UP if node % 2 else DOWN])

    def reset(self) -> None:
        self._state = self.sample_node_state(int(self.rng.integers(2 * len(self.stops))), self.rng)

    def node_of(self, state) -> int | None:
        x, theta = map(float, state)
        i = int(np.argmin(np.abs(self.stops - x)))
        if abs(self.stops[i] - x) > 0.5 * self.gap:
            return None
        return 2 * i + (1 if theta > 0 else 0)

    def sample_node_state(self, node: int, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        s = self._node_state(node)
        return s + rng.normal(0.0, 1.0, 2) * [self.task.position_noise, self.task.angle_noise]

    # -- geometry ------------------------------------------------------------
    def _neighbor(self, x: float, side: str):
        """Nearest obstacle kind within one rod length on ``side``."""
        reach = self.task.rod_length
        for left, right, kind in self.obstacles:
            if side == "left" and 0.0 <= x - right <= reach:
                return kind
            if side == "right" and 0.0 <= left - x <= reach:
                return kind
        return None

    def _halt(self, x: float, theta: float, side: str) -> float:
        """Position where a translation toward ``side`` halts."""
        if side == "left":
            face = max(r for _, r, k in self.obstacles if r <= x and _impedes(k, theta))
            return face + self.gap
        face = min(l for l, _, k in self.obstacles if l >= x and _impedes(k, theta))
        return face - self.gap

    @staticmethod
    def _sweep_side(option_id: int) -> str:
        # viewed with the track running left to right: rotating clockwise from
        # pointing down passes through pointing left, and so on
        return "left" if option_id in (ROTATE_UP_CW, ROTATE_DOWN_ACW) else "right"

    def observe(self, state=None) -> np.ndarray:
        x, theta = (self._state if state is None else np.asarray(state, dtype=float))
        obs = np.zeros(11)
        for offset, side in ((0, "left"), (5, "right")):
            kind = self._neighbor(x, side)
            obs[offset + (0 if kind is None else _TYPE_OF_KIND[kind])] = 1.0
        obs[10] = theta + self.rng.normal(0.0, self.task.angle_noise)
        return obs

    def can_execute(self, option_id: int, state=None) -> bool:
        x, theta = (self._state if state is None else np.asarray(state, dtype=float))
        if option_id == GO_LEFT:
            return x - self._halt(x, theta, "left") > 0.5 * self.gap
        if option_id == GO_RIGHT:
            return self._halt(x, theta, "right") - x > 0.5 * self.gap
        if option_id in (ROTATE_UP_CW, ROTATE_UP_ACW) and theta > 0:
            return False
        if option_id in (ROTATE_DOWN_CW, ROTATE_DOWN_ACW) and theta <= 0:
            return False
        if option_id not in range(6):
            raise ValueError(f"unknown option {option_id}")
        return self._neighbor(x, self._sweep_side(option_id)) is None

    def _run(self, option_id: int):
        x, theta = self._state
        if option_id in (GO_LEFT, GO_RIGHT):
            target = self._halt(x, theta, "left" if option_id == GO_LEFT else "right")
            duration = max(1, math.ceil(abs(target - x) / SPEED))
            nxt = np.array([target + self.rng.normal(0.0, self.task.position_noise), theta])
        else:
            goal = UP if option_id in (ROTATE_UP_CW, ROTATE_UP_ACW) else DOWN
            duration = max(1, math.ceil(math.pi / SPEED))
            nxt = np.array([x, goal + self.rng.normal(0.0, self.task.angle_noise)])
        return nxt, duration, -float(duration)

    def abstract_graph(self) -> AbstractGraph:
        n = 2 * len(self.stops)
        nodes = [self._node_state(i) for i in range(n)]
        edges = {}
        for i, s in enumerate(nodes):
            for o in self.options:
                if not self.can_execute(o.option_id, s):
                    continue
                x, theta = s
                if o.option_id in (GO_LEFT, GO_RIGHT):
                    x = self._halt(x, theta, "left" if o.option_id == GO_LEFT else "right")
                else:
                    theta = UP if o.option_id in (ROTATE_UP_CW, ROTATE_UP_ACW) else DOWN
                edges[(i, o.option_id)] = self.node_of((x, theta))
        names = [f"x={self.stops[i // 2]:.2f},{'up' if i % 2 else 'down'}" for i in range(n)]
        return AbstractGraph(nodes=nodes, edges=edges, names=names)


def random_task(num_blocks: int, seed: int, track_length: float = 18.0, rod_length: float = 1.0,
                block_width: float = 1.0) -> RodBlockTask:
    """Blocks of uniformly drawn kinds, spread along the track with at least
    ``MIN_GAP`` rod lengths of clearance between neighbouring faces."""
    if not 1 <= num_blocks <= 4:
        raise ValueError(f"num_blocks must be between 1 and 4, got {num_blocks}")
    rng = np.random.default_rng(seed)
    min_gap = MIN_GAP * rod_length
    free = track_length - num_blocks * block_width - (num_blocks + 1) * min_gap
    if free < 0:
        raise ValueError("track too short for that many blocks")
    gaps = min_gap + free * rng.dirichlet(np.ones(num_blocks + 1))
    kinds = rng.integers(len(KINDS), size=num_blocks)
    blocks, x = [], 0.0
    for i in range(num_blocks):
        x += gaps[i]
        blocks.append((round(float(x + block_width / 2), 6), KINDS[int(kinds[i])]))
        x += block_width
    return RodBlockTask(tuple(blocks), track_length, rod_length, block_width)


def make_rod_block(num_blocks: int, seed: int = 0) -> RodBlockEnv:
    return RodBlockEnv(random_task(num_blocks, seed), seed=seed)
