"""End-to-end helpers: learn a portable model, learn a task-specific model,
ground either one in a task, and build start beliefs."""
from __future__ import annotations

import warnings

import numpy as np

from .core import Dataset, Environment
from .domains import EPS, obs_noise, state_noise
from .ground import (GroundedModel, Labeling, LinkingFunction, ground_rules, label_problem_partitions,
                     learn_linking, trivial_labeling)
from .partition import DEFAULT_MIN_SAMPLES, DEFAULT_OVERLAP, data_scale, partition_all
from .plan import BeliefState
from .symbols import DISCARD_THRESHOLD, SIMILARITY_THRESHOLD, PortableModel, build_portable_rules


def _eps(family: str, space: str, eps: float | None) -> float:
    if eps is not None:
        return eps
    return EPS.get(family, {}).get(space, 0.1)


def learn_portable(ds: Dataset, option_names: dict[int, str] | None = None, *, eps: float | None = None,
                   min_samples: int = DEFAULT_MIN_SAMPLES, overlap_threshold: float = DEFAULT_OVERLAP,
                   negatives: str = "failures", discard_threshold: float = DISCARD_THRESHOLD,
                   similarity_threshold: float = SIMILARITY_THRESHOLD, seed: int = 0) -> PortableModel:
    """Egocentric partitions, symbols and rules from (possibly pooled) data."""
    eps = _eps(ds.domain_family, "ego", eps)
    scale = data_scale(ds, "ego")
    parts = partition_all(ds, "ego", eps=eps, min_samples=min_samples, overlap_threshold=overlap_threshold,
                          scale=scale)
    noise = obs_noise(ds.domain_family, ds.obs.shape[1])
    return build_portable_rules(ds, parts, noise=noise, space="ego", option_names=option_names,
                                discard_threshold=discard_threshold, similarity_threshold=similarity_threshold,
                                negatives=negatives, min_samples=min_samples, scale=scale, eps=eps,
                                seed=seed)


def learn_task_specific(ds: Dataset, option_names: dict[int, str] | None = None, *, eps: float | None = None,
                        min_samples: int = DEFAULT_MIN_SAMPLES, overlap_threshold: float = DEFAULT_OVERLAP,
                        seed: int = 0) -> PortableModel:
    """The same rule learner run directly in problem space."""
    eps = _eps(ds.domain_family, "problem", eps)
    scale = data_scale(ds, "problem")
    parts = partition_all(ds, "problem", eps=eps, min_samples=min_samples, overlap_threshold=overlap_threshold,
                          scale=scale)
    noise = state_noise(ds.domain_family, ds.states.shape[1])
    # kernel width of the order of the clustering radius
    clf = {"gamma": 1.0 / (2.0 * (2.0 * eps) ** 2), "C": 10.0}
    return build_portable_rules(ds, parts, noise=noise, space="problem", option_names=option_names,
                                min_samples=min_samples, scale=scale, classifier_kwargs=clf, eps=eps,
                                seed=seed)


def label_task(ds: Dataset, *, eps: float | None = None, min_samples: int = DEFAULT_MIN_SAMPLES,
               overlap_threshold: float = DEFAULT_OVERLAP, seed: int = 0) -> Labeling:
    eps = _eps(ds.domain_family, "problem", eps)
    noise = state_noise(ds.domain_family, ds.states.shape[1])
    return label_problem_partitions(ds, eps=eps, min_samples=min_samples, overlap_threshold=overlap_threshold,
                                    noise=noise, seed=seed)


def ground_task(model: PortableModel, ds: Dataset, goal_states=None, goal_flags=None, *,
                labeling: Labeling | None = None, seed: int = 0, **label_kwargs) -> GroundedModel:
    """Ground a portable model with labels and linking learned from ``ds``."""
    labeling = label_task(ds, seed=seed, **label_kwargs) if labeling is None else labeling
    linking = learn_linking(ds, labeling, model, space="ego")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ground_rules(model, linking, labeling, goal_states, goal_flags, space="ego", seed=seed)


def ground_task_specific(model: PortableModel, ds: Dataset, goal_states=None, goal_flags=None,
                         seed: int = 0) -> GroundedModel:
    """Wrap a problem-space model: one label, every rule linked to it."""
    labeling = trivial_labeling(ds)
    linking = learn_linking(ds, labeling, model, space="problem")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return ground_rules(model, linking, labeling, goal_states, goal_flags, space="problem", seed=seed)


def belief_from_states(gm: GroundedModel, env: Environment, states) -> BeliefState:
    """Start belief for states of ``env``: observations plus their labels."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    if gm.space == "problem":
        return BeliefState.uniform(states, np.zeros(len(states), int))
    obs = np.array([env.observe(s) for s in states])
    return BeliefState.uniform(obs, gm.labeling.assign(states))
