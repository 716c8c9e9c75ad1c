import warnings

import numpy as np
import pytest

from portsym.domains.corridor import (ANTICLOCKWISE, CLOCKWISE, INWARD, OUTWARD, WALL_DEAD_END, WALL_JUNCTION,
                                      WINDOW_JUNCTION)
from portsym.ground import LinkingFunction, ground_rules
from portsym.pipeline import belief_from_states, ground_task
from portsym.plan import (BeliefState, MissingOperatorError, monte_carlo_success, plan_probability,
                          search_plan)


def _states(env, node, n=64, seed=0):
    rng = np.random.default_rng(seed)
    return np.array([env.sample_node_state(node, rng) for _ in range(n)])


def test_empty_plan_is_certain(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_JUNCTION))
    assert plan_probability(corridor_grounded, Z, []) == 1.0


def test_unlinked_start_gives_zero(corridor_grounded):
    Z = BeliefState.uniform(np.tile([0.75, 0.4, 0.4], (10, 1)), 99)
    assert plan_probability(corridor_grounded, Z, [(CLOCKWISE, None)]) == 0.0


def test_non_initiable_first_step_is_near_zero(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_JUNCTION))
    assert plan_probability(corridor_grounded, Z, [(INWARD, None), (CLOCKWISE, None)]) < 0.01


def test_outward_inward_matches_simulation(corridor_env, corridor_grounded):
    starts = _states(corridor_env, WINDOW_JUNCTION)
    Z = belief_from_states(corridor_grounded, corridor_env, starts)
    p = plan_probability(corridor_grounded, Z, [(OUTWARD, None), (INWARD, None)])
    mc = monte_carlo_success(corridor_env, [OUTWARD, INWARD], 1000, seed=1, start=starts)
    assert abs(p - mc) <= 0.05


def test_missing_operator_is_named(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_JUNCTION))
    with pytest.raises(MissingOperatorError, match="option 0 partition 9"):
        plan_probability(corridor_grounded, Z, [(CLOCKWISE, 9)])


def test_probability_stays_in_unit_interval(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_DEAD_END))
    for plan in ([(INWARD, None)], [(INWARD, None), (OUTWARD, None), (INWARD, None)], [(CLOCKWISE, None)]):
        assert 0.0 <= plan_probability(corridor_grounded, Z, plan) <= 1.0


def test_plan_probability_is_reproducible(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_DEAD_END))
    plan = [(INWARD, None), (CLOCKWISE, None)]
    assert plan_probability(corridor_grounded, Z, plan, seed=3) == plan_probability(corridor_grounded, Z, plan,
                                                                                    seed=3)


# -- simulation oracle -----------------------------------------------------------

def test_never_initiable_plan_never_succeeds(corridor_env):
    starts = _states(corridor_env, WALL_JUNCTION)
    assert monte_carlo_success(corridor_env, [INWARD], 200, start=starts) == 0.0


def test_always_valid_step_always_succeeds(corridor_env):
    starts = _states(corridor_env, WALL_DEAD_END)
    assert monte_carlo_success(corridor_env, [INWARD], 200, start=starts) == 1.0


def test_clockwise_from_wall_junction(corridor_env):
    rate = monte_carlo_success(corridor_env, [CLOCKWISE], 1000, seed=0,
                               start=lambda rng: corridor_env.sample_node_state(WALL_JUNCTION, rng))
    assert rate == pytest.approx(1.0, abs=0.02)


def test_goal_is_checked_at_the_end(corridor_env):
    starts = _states(corridor_env, WALL_JUNCTION)
    at_window = lambda s: corridor_env.node_of(s) == WINDOW_JUNCTION
    assert monte_carlo_success(corridor_env, [ANTICLOCKWISE], 100, start=starts, goal=at_window) == 1.0
    assert monte_carlo_success(corridor_env, [OUTWARD], 100, start=starts, goal=at_window) == 0.0


def test_rollouts_must_be_positive(corridor_env):
    with pytest.raises(ValueError):
        monte_carlo_success(corridor_env, [INWARD], 0)


# -- search -------------------------------------------------------------------------

def _goal_samples(env, node, rng):
    states = np.vstack([env.sample_node_state(n, rng) for n in range(4) for _ in range(30)])
    flags = np.array([env.node_of(s) == node for s in states])
    return states, flags


def test_goal_already_met_gives_empty_plan(corridor_env, corridor_model, corridor_data, rng):
    states, flags = _goal_samples(corridor_env, WALL_JUNCTION, rng)
    gm = ground_task(corridor_model, corridor_data, states, flags)
    Z = belief_from_states(gm, corridor_env, _states(corridor_env, WALL_JUNCTION))
    plan = search_plan(gm, Z, goal=True)
    assert plan is not None and plan.steps == []


def test_no_operators_and_unmet_goal_fails(corridor_env, corridor_model, corridor_grounded, rng):
    states, flags = _goal_samples(corridor_env, WALL_DEAD_END, rng)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        gm = ground_rules(corridor_model, LinkingFunction({}), corridor_grounded.labeling, states, flags)
    Z = belief_from_states(gm, corridor_env, _states(corridor_env, WINDOW_JUNCTION))
    assert search_plan(gm, Z, goal=True) is None


def test_search_reaches_far_dead_end(corridor_env, corridor_model, corridor_data, rng):
    states, flags = _goal_samples(corridor_env, WALL_DEAD_END, rng)
    gm = ground_task(corridor_model, corridor_data, states, flags)
    starts = _states(corridor_env, WINDOW_JUNCTION)
    Z = belief_from_states(gm, corridor_env, starts)
    plan = search_plan(gm, Z, goal=True, max_depth=3)
    assert plan is not None
    options = [o for o, _ in plan.steps]
    at_goal = lambda s: corridor_env.node_of(s) == WALL_DEAD_END
    assert monte_carlo_success(corridor_env, options, 1000, start=starts, goal=at_goal) >= 0.9
    # the reported probability is what plan_probability recomputes
    again = plan_probability(gm, Z, plan.steps, goal=True, particles=256, seed=0)
    assert plan.probability == pytest.approx(again)


def test_search_validates_arguments(corridor_env, corridor_grounded):
    Z = belief_from_states(corridor_grounded, corridor_env, _states(corridor_env, WALL_JUNCTION))
    with pytest.raises(ValueError):
        search_plan(corridor_grounded, Z, max_depth=-1)
    with pytest.raises(ValueError):
        search_plan(corridor_grounded, Z, prob_floor=1.5)


def test_belief_weights_are_normalised():
    Z = BeliefState(np.zeros((3, 2)), [0, 0, 1], [1.0, 1.0, 2.0])
    assert Z.weights.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        BeliefState(np.zeros((2, 2)), [0, 0], [0.0, 0.0])
