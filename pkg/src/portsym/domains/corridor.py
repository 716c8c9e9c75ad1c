"""Corridor navigation task.

A circular ring corridor with two diametrically opposite junctions, one
with a plain wall and one with windows. Each junction has a radial corridor
leading outward to a dead-end. Problem space is the agent's (x, y); the
egocentric observation is a 3-vector describing the local view:

    (openness, brightness, echo)

openness is the unobstructed fraction of the surrounding panorama, brightness
the ambient light level, echo the normalised reverberation. The three kinds
of place have the prototypes below, which differ in every coordinate, so any
move between two kinds of place changes all three variables.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..core import AbstractGraph, Environment, OptionDescriptor

CLOCKWISE, ANTICLOCKWISE, OUTWARD, INWARD = range(4)

PROTOTYPES = {
    "dead-end": np.array([0.25, 0.10, 0.80]),
    "wall-junction": np.array([0.75, 0.40, 0.40]),
    "window-junction": np.array([1.00, 0.90, 0.10]),
}
OBS_NOISE = 0.01
SPEED = 0.05

# node order of the analytic regions
WALL_JUNCTION, WINDOW_JUNCTION, WALL_DEAD_END, WINDOW_DEAD_END = range(4)
NODE_NAMES = ("wall-junction", "window-junction", "wall-dead-end", "window-dead-end")
NODE_KIND = ("wall-junction", "window-junction", "dead-end", "dead-end")


@dataclass(frozen=True)
class CorridorTask:
    radius: float = 2.0
    junction_angles: tuple[float, float] = (0.0, math.pi)  # (wall, window)
    corridor_length: float = 2.0
    offset: tuple[float, float] = (0.0, 0.0)
    noise: float | None = None  # motion sigma; default 1% of corridor length

    def __post_init__(self):
        a, b = self.junction_angles
        gap = (b - a) % (2 * math.pi)
        if abs(gap - math.pi) > 1e-9:
            raise ValueError("junctions must be diametrically opposite")
        if self.radius <= 0 or self.corridor_length <= 0:
            raise ValueError("radius and corridor length must be positive")

    @property
    def motion_noise(self) -> float:
        return 0.01 * self.corridor_length if self.noise is None else self.noise

    def descriptor(self) -> dict:
        return {
            "family": "corridor",
            "radius": self.radius,
            "junction_angles": list(self.junction_angles),
            "corridor_length": self.corridor_length,
            "offset": list(self.offset),
            "noise": self.noise,
        }

    @classmethod
    def from_descriptor(cls, d: dict) -> "CorridorTask":
        return cls(
            radius=float(d.get("radius", 2.0)),
            junction_angles=tuple(d.get("junction_angles", (0.0, math.pi))),
            corridor_length=float(d.get("corridor_length", 2.0)),
            offset=tuple(d.get("offset", (0.0, 0.0))),
            noise=d.get("noise"),
        )


class CorridorEnv(Environment):
    family = "corridor"
    options = (
        OptionDescriptor(CLOCKWISE, "Clockwise"),
        OptionDescriptor(ANTICLOCKWISE, "Anticlockwise"),
        OptionDescriptor(OUTWARD, "Outward"),
        OptionDescriptor(INWARD, "Inward"),
    )
    obs_dim = 3
    state_dim = 2
    capture_radius = 0.3

    def __init__(self, task: CorridorTask, seed: int = 0):
        r, length = task.radius, task.corridor_length
        aw, ad = task.junction_angles
        off = np.asarray(task.offset, dtype=float)
        unit = lambda a: np.array([math.cos(a), math.sin(a)])
        self.points = np.stack([
            off + r * unit(aw),
            off + r * unit(ad),
            off + (r + length) * unit(aw),
            off + (r + length) * unit(ad),
        ])
        super().__init__(task, seed)

    def reset(self) -> None:
        self._state = self.sample_node_state(int(self.rng.integers(4)), self.rng)

    def node_of(self, state) -> int | None:
        d = np.linalg.norm(self.points - np.asarray(state, dtype=float), axis=1)
        i = int(np.argmin(d))
        return i if d[i] <= self.capture_radius else None

    def sample_node_state(self, node: int, rng=None) -> np.ndarray:
        rng = self.rng if rng is None else rng
        return self.points[node] + rng.normal(0.0, self.task.motion_noise, 2)

    def observe(self, state=None) -> np.ndarray:
        state = self._state if state is None else np.asarray(state, dtype=float)
        d = np.linalg.norm(self.points - state, axis=1)
        kind = NODE_KIND[int(np.argmin(d))]
        return PROTOTYPES[kind] + self.rng.normal(0.0, OBS_NOISE, 3)

    def can_execute(self, option_id: int, state=None) -> bool:
        node = self.node_of(self._state if state is None else state)
        if node is None:
            return False
        at_junction = node in (WALL_JUNCTION, WINDOW_JUNCTION)
        if option_id in (CLOCKWISE, ANTICLOCKWISE, OUTWARD):
            return at_junction
        if option_id == INWARD:
            return not at_junction
        raise ValueError(f"unknown option {option_id}")

    def _target(self, node: int, option_id: int) -> int:
        if option_id in (CLOCKWISE, ANTICLOCKWISE):
            return WINDOW_JUNCTION if node == WALL_JUNCTION else WALL_JUNCTION
        if option_id == OUTWARD:
            return node + 2
        return node - 2

    def _run(self, option_id: int):
        node = self.node_of(self._state)
        target = self._target(node, option_id)
        if option_id in (CLOCKWISE, ANTICLOCKWISE):
            distance = math.pi * self.task.radius
        else:
            distance = self.task.corridor_length
        duration = max(1, math.ceil(distance / SPEED))
        return self.sample_node_state(target), duration, -float(duration)

    def abstract_graph(self) -> AbstractGraph:
        edges = {}
        for node in range(4):
            for o in self.options:
                if self.can_execute(o.option_id, self.points[node]):
                    edges[(node, o.option_id)] = self._target(node, o.option_id)
        return AbstractGraph(nodes=[p.copy() for p in self.points], edges=edges, names=list(NODE_NAMES))


def decode_observation(obs) -> str:
    """Name of the nearest observation prototype; a held-out reference
    decoder used only for evaluation."""
    obs = np.asarray(obs, dtype=float)
    return min(PROTOTYPES, key=lambda k: float(np.linalg.norm(PROTOTYPES[k] - obs)))


def make_corridor(offset=(0.0, 0.0), seed: int = 0, **kwargs) -> CorridorEnv:
    return CorridorEnv(CorridorTask(offset=tuple(float(v) for v in offset), **kwargs), seed=seed)
