"""Simulated domain families and a small registry keyed by family name."""
from __future__ import annotations

import math

import numpy as np

from .corridor import CorridorEnv, CorridorTask, make_corridor
from .rodblock import RodBlockEnv, RodBlockTask, make_rod_block, random_task
from .treasure import TreasureMazeEnv, TreasureMazeTask, load_level, make_treasure

FAMILIES = ("corridor", "rodblock", "treasure")

_ENV = {"corridor": (CorridorTask, CorridorEnv),
        "rodblock": (RodBlockTask, RodBlockEnv),
        "treasure": (TreasureMazeTask, TreasureMazeEnv)}


def make_env(descriptor: dict, seed: int = 0):
    """Build an environment from a task descriptor (``{"family": ..., ...}``)."""
    family = descriptor.get("family")
    if family not in _ENV:
        raise ValueError(f"unknown domain family {family!r}; expected one of {FAMILIES}")
    task_cls, env_cls = _ENV[family]
    return env_cls(task_cls.from_descriptor(descriptor), seed=seed)


def task_suite(family: str, num_tasks: int = 10, seed: int = 0) -> list[dict]:
    """Descriptors of the tasks used by transfer experiments."""
    if family == "corridor":
        rng = np.random.default_rng(seed)
        return [CorridorTask(offset=tuple(float(v) for v in rng.uniform(-10, 10, 2)),
                             junction_angles=(a, a + math.pi)).descriptor()
                for a in rng.uniform(0, math.pi, num_tasks)]
    if family == "rodblock":
        return [random_task(1 + i % 4, seed=1000 * seed + i).descriptor() for i in range(num_tasks)]
    if family == "treasure":
        if num_tasks > 10:
            raise ValueError("only 10 treasure levels ship with the package")
        return [{"family": "treasure", "level": i} for i in range(num_tasks)]
    raise ValueError(f"unknown domain family {family!r}; expected one of {FAMILIES}")


# clustering radius (fraction of the data range) per family and space
EPS = {
    "corridor": {"ego": 0.1, "problem": 0.1},
    "rodblock": {"ego": 0.1, "problem": 0.02},
    "treasure": {"ego": 0.05, "problem": 0.02},
}


def state_noise(family: str, state_dim: int) -> np.ndarray:
    """Declared per-variable noise of problem-space states."""
    if family == "corridor":
        return np.full(state_dim, 0.02)
    if family == "rodblock":
        return np.array([0.01, 0.01 * math.pi])
    noise = np.zeros(state_dim)
    noise[:2] = 0.01
    return noise


def obs_noise(family: str, obs_dim: int) -> np.ndarray:
    """Declared per-variable sensor noise of the egocentric observation."""
    if family == "corridor":
        from .corridor import OBS_NOISE
        return np.full(obs_dim, OBS_NOISE)
    if family == "rodblock":
        return np.r_[np.zeros(obs_dim - 1), 0.01 * math.pi]
    return np.zeros(obs_dim)


__all__ = [
    "FAMILIES", "CorridorEnv", "CorridorTask", "RodBlockEnv", "RodBlockTask", "TreasureMazeEnv",
    "TreasureMazeTask", "load_level", "make_corridor", "make_env", "make_rod_block", "make_treasure",
    "EPS", "obs_noise", "random_task", "state_noise", "task_suite",
]
