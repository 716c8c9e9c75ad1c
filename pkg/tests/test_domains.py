import math

import numpy as np
import pytest

from portsym.core import collect
from portsym.domains import make_corridor, make_env, make_rod_block, make_treasure, task_suite
from portsym.domains.corridor import INWARD, OUTWARD, WINDOW_DEAD_END, decode_observation
from portsym.domains.rodblock import (DOWN, GO_LEFT, GO_RIGHT, ROTATE_UP_CW, UP, RodBlockEnv, RodBlockTask,
                                      random_task)
from portsym.domains.treasure import DOWN_LADDER, GO_LEFT as T_LEFT, GO_RIGHT as T_RIGHT, INTERACT, UP_LADDER
from portsym.domains.treasure import LevelError, load_level, parse_level


# -- corridor --------------------------------------------------------------------

def test_inward_from_window_dead_end_reaches_window_junction():
    env = make_corridor()
    env.set_state(env.sample_node_state(WINDOW_DEAD_END))
    ok, _, _ = env.execute(INWARD)
    assert ok
    assert decode_observation(env.observe()) == "window-junction"


def test_outward_twice_fails_the_second_time():
    env = make_corridor()
    env.set_state(env.sample_node_state(0))
    assert env.execute(OUTWARD)[0]
    before = env.state
    assert not env.execute(OUTWARD)[0]
    assert np.array_equal(env.state, before)


def test_observations_ignore_translation():
    a = collect(make_corridor(offset=(0, 0)), 200, 4)
    b = collect(make_corridor(offset=(7.5, -3.25)), 200, 4)
    assert np.array_equal(a.obs, b.obs)
    assert np.array_equal(a.next_obs, b.next_obs)
    assert not np.array_equal(a.states, b.states)


def test_corridor_descriptor_round_trip():
    env = make_corridor(offset=(1.0, 2.0))
    again = make_env(env.task.descriptor())
    assert again.task == env.task


def test_corridor_graph_shape():
    g = make_corridor().abstract_graph()
    assert len(g.nodes) == 4
    # two junctions with three options each, two dead-ends with Inward only
    assert len(g.edges) == 8


# -- rod and block -----------------------------------------------------------------

def _rod(blocks):
    return RodBlockEnv(RodBlockTask(blocks=tuple(blocks), noise=0.0), seed=0)


def test_go_left_at_left_wall_fails():
    env = _rod([(9.0, "blocks-down")])
    env.set_state([env.stops[0], DOWN])
    before = env.state
    assert not env.execute(GO_LEFT)[0]
    assert np.array_equal(env.state, before)


def test_go_right_passes_a_block_that_does_not_impede():
    blocks = [(5.0, "blocks-down"), (9.0, "blocks-both"), (13.0, "blocks-up")]
    env = _rod(blocks)
    env.set_state([1.0, UP])
    assert env.execute(GO_RIGHT)[0]
    # halts before the first obstacle that impedes an upward rod: the blocks-both face
    expected = 9.0 - 0.5 - 0.25 * env.task.rod_length
    assert env.state[0] == pytest.approx(expected, abs=1e-9)
    assert env.state[1] == UP


def test_go_right_runs_to_the_wall_when_nothing_impedes():
    env = _rod([(5.0, "blocks-down"), (11.0, "blocks-down")])
    env.set_state([1.0, UP])
    env.execute(GO_RIGHT)
    assert env.state[0] == pytest.approx(env.task.track_length - 0.25, abs=1e-9)


def test_rotate_up_next_to_right_wall():
    env = _rod([(5.0, "blocks-down")])
    x = env.stops[-1]
    env.set_state([x, DOWN])
    assert env.execute(ROTATE_UP_CW)[0]
    assert env.state[1] == pytest.approx(UP, abs=5 * env.task.angle_noise)
    assert env.state[0] == x
    assert env.observe()[5 + 1] == 1.0  # wall still the right neighbour


def test_rotation_blocked_on_sweep_side():
    env = _rod([(5.0, "blocks-down")])
    env.set_state([env.stops[0], DOWN])  # wall on the left, which the clockwise sweep crosses
    assert not env.can_execute(ROTATE_UP_CW)


@pytest.mark.parametrize("n", [0, 5])
def test_rod_block_rejects_bad_block_count(n):
    with pytest.raises(ValueError):
        make_rod_block(n)


def test_random_rod_tasks_are_valid():
    for seed in range(20):
        task = random_task(1 + seed % 4, seed)
        lo, hi = task.walls
        centres = sorted(c for c, _ in task.blocks)
        assert all(lo < c < hi for c in centres)
        assert all(b - a > task.rod_length for a, b in zip(centres, centres[1:]))


# -- treasure ------------------------------------------------------------------------

def test_scripted_solve_of_level_zero():
    env = make_treasure(0)
    for o in (T_RIGHT, UP_LADDER, INTERACT, T_LEFT, INTERACT):
        assert env.execute(o)[0]
    assert env.observe()[10] == 1.0


def test_down_ladder_lands_below_ladder_base():
    env = make_treasure(0)
    env.execute(T_RIGHT)
    bottom = env.state[:2]
    env.execute(UP_LADDER)
    x_top = env.state[0]
    assert env.execute(DOWN_LADDER)[0]
    assert env.state[1] == pytest.approx(bottom[1], abs=0.05)
    assert env.state[0] == pytest.approx(x_top, abs=0.05)


def test_interact_with_nothing_fails():
    env = make_treasure(0)
    before = env.state
    assert not env.execute(INTERACT)[0]
    assert np.array_equal(env.state, before)


def test_observation_has_nine_cells_and_two_bag_bits():
    env = make_treasure(3)
    assert env.observe().shape == (11,)


@pytest.mark.parametrize("index", [-1, 10])
def test_bad_level_index_lists_valid_range(index):
    with pytest.raises(ValueError, match="0"):
        make_treasure(index)


def test_every_shipped_level_is_solvable():
    for i in range(10):
        env = make_treasure(i)
        assert env.treasure_reachable()


def test_door_without_opener_is_rejected():
    with pytest.raises(LevelError):
        parse_level("#####\n#$A@#\n#####\n")


def test_option_controllers_stay_within_cap():
    for desc in task_suite("rodblock", 3) + task_suite("treasure", 3) + task_suite("corridor", 2):
        env = make_env(desc, seed=1)
        ds = collect(env, 300, 1)
        assert max(t.duration for t in ds) <= env.max_duration


def test_level_loader_matches_registry():
    assert load_level(2).grid == make_treasure(2).task.grid


def test_observation_is_deterministic_without_noise_sources():
    env = make_treasure(1)
    assert np.array_equal(env.observe(), env.observe())
    rod = _rod([(5.0, "blocks-up")])
    rod.set_state([3.0, math.pi / 2])
    assert np.array_equal(rod.observe()[:10], rod.observe()[:10])
