"""Exact reward-table verification across every scheme and outcome."""

import numpy as np
import pytest

from srmtlab import maps
from srmtlab.errors import ContractError
from srmtlab.gridenv import Action, TransitionRecord
from srmtlab.rewards import DistanceCache, RewardContext, RewardScheme, compute_reward


def record(old, new, goal, followed=False, arrived=None):
    if arrived is None:
        arrived = new == goal
    return TransitionRecord(agent_index=0, old_position=old, new_position=new,
                            goal=goal, action=Action.STAY, followed_path=followed,
                            arrived=arrived, moved=new != old, path_reachable=True)


@pytest.fixture(scope="module")
def ctx():
    return RewardContext(maps.GridMap(np.zeros((5, 5), dtype=bool)))


# Outcomes on the open 5x5 map with goal (0, 4): arrival, a move towards the
# goal, a move away from it, and holding still.
ARRIVE = record((0, 3), (0, 4), (0, 4))
TOWARDS = record((0, 1), (0, 2), (0, 4))
AWAY = record((0, 2), (0, 1), (0, 4))
HOLD = record((0, 2), (0, 2), (0, 4))

TABLE = [
    (RewardScheme.DIRECTIONAL, ARRIVE, 1.0),
    (RewardScheme.DIRECTIONAL, TOWARDS, 0.005),
    (RewardScheme.DIRECTIONAL, AWAY, 0.0),
    (RewardScheme.DIRECTIONAL, HOLD, 0.0),
    (RewardScheme.SPARSE, ARRIVE, 1.0),
    (RewardScheme.SPARSE, TOWARDS, 0.0),
    (RewardScheme.SPARSE, AWAY, 0.0),
    (RewardScheme.SPARSE, HOLD, 0.0),
    (RewardScheme.DENSE, ARRIVE, 1.0),
    (RewardScheme.DENSE, TOWARDS, -0.01),
    (RewardScheme.DENSE, AWAY, -0.01),
    (RewardScheme.DENSE, HOLD, -0.01),
    (RewardScheme.DIRECTIONAL_NEGATIVE, ARRIVE, 1.0),
    (RewardScheme.DIRECTIONAL_NEGATIVE, TOWARDS, -0.005),
    (RewardScheme.DIRECTIONAL_NEGATIVE, AWAY, -0.01),
    (RewardScheme.DIRECTIONAL_NEGATIVE, HOLD, -0.01),
    (RewardScheme.MOVING_NEGATIVE, ARRIVE, 1.0),
    (RewardScheme.MOVING_NEGATIVE, TOWARDS, -0.01),
    (RewardScheme.MOVING_NEGATIVE, AWAY, -0.01),
    (RewardScheme.MOVING_NEGATIVE, HOLD, -0.005),
]


@pytest.mark.parametrize("scheme,rec,expected", TABLE)
def test_reward_table(scheme, rec, expected, ctx):
    assert compute_reward(scheme, rec, ctx) == expected


def test_lifelong_follow(ctx):
    followed = record((0, 1), (0, 2), (0, 4), followed=True)
    strayed = record((0, 1), (1, 1), (0, 4), followed=False)
    assert compute_reward(RewardScheme.LIFELONG_FOLLOW, followed, ctx) == 0.01
    assert compute_reward(RewardScheme.LIFELONG_FOLLOW, strayed, ctx) == 0.0


def test_lifelong_goal_bonus_flag():
    grid = maps.GridMap(np.zeros((5, 5), dtype=bool))
    bonus_ctx = RewardContext(grid, lifelong_goal_bonus=True)
    arriving = record((0, 3), (0, 4), (0, 4), followed=True)
    assert compute_reward(RewardScheme.LIFELONG_FOLLOW, arriving, bonus_ctx) == 1.01


def test_on_goal_plus_one_under_all_classical_schemes(ctx):
    for scheme in (RewardScheme.DIRECTIONAL, RewardScheme.SPARSE, RewardScheme.DENSE,
                   RewardScheme.DIRECTIONAL_NEGATIVE, RewardScheme.MOVING_NEGATIVE):
        assert compute_reward(scheme, ARRIVE, ctx) == 1.0


def test_towards_goal_uses_graph_distance_not_manhattan():
    # A wall forces a detour: stepping "closer" in Manhattan terms is farther
    # along the graph, so Directional must pay nothing for it.
    obstacles = np.zeros((3, 3), dtype=bool)
    obstacles[0, 1] = True
    obstacles[1, 1] = True
    grid = maps.GridMap(obstacles)
    ctx = RewardContext(grid)
    goal = (0, 2)
    # (1, 0) -> (0, 0): Manhattan to goal shrinks 3 -> 2, graph grows 4 -> 5.
    rec = record((1, 0), (0, 0), goal)
    assert compute_reward(RewardScheme.DIRECTIONAL, rec, ctx) == 0.0
    # (1, 0) -> (2, 0) walks the detour: graph distance 4 -> 3.
    rec = record((1, 0), (2, 0), goal)
    assert compute_reward(RewardScheme.DIRECTIONAL, rec, ctx) == 0.005


def test_scheme_from_name():
    assert RewardScheme.from_name("moving_negative") is RewardScheme.MOVING_NEGATIVE
    with pytest.raises(ContractError):
        RewardScheme.from_name("bogus")


def test_distance_cache_reuses_fields():
    grid = maps.gen_random(10, 10, 0.2, seed=0)
    cache = DistanceCache()
    goal = grid.free_cells()[0]
    first = cache.field(grid, goal)
    assert cache.field(grid, goal) is first
