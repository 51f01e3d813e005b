"""Reward schemes for classical and lifelong episodes.

"Moved towards the goal" always means the true graph distance to the goal
strictly decreased; Manhattan distance would disagree with it behind walls,
so distances come from cached per-goal breadth-first fields.
"""

from __future__ import annotations

from enum import Enum

from .errors import ContractError
from .gridenv import TransitionRecord
from .maps import Cell, GridMap
from .pathing import UNREACHABLE, bfs_distances


class RewardScheme(Enum):
    DIRECTIONAL = "directional"
    SPARSE = "sparse"
    DENSE = "dense"
    DIRECTIONAL_NEGATIVE = "directional_negative"
    MOVING_NEGATIVE = "moving_negative"
    LIFELONG_FOLLOW = "lifelong_follow"

    @classmethod
    def from_name(cls, name: str) -> "RewardScheme":
        try:
            return cls(name)
        except ValueError:
            valid = ", ".join(s.value for s in cls)
            raise ContractError(f"unknown reward scheme {name!r}; expected one of {valid}") from None


class DistanceCache:
    """Per-(map, goal) BFS distance fields, read-only after construction."""

    def __init__(self):
        self._fields: dict[tuple, "object"] = {}

    def field(self, grid: GridMap, goal: Cell):
        key = (grid.key(), goal)
        if key not in self._fields:
            self._fields[key] = bfs_distances(grid, goal)
        return self._fields[key]

    def distance(self, grid: GridMap, cell: Cell, goal: Cell) -> int:
        return int(self.field(grid, goal)[cell])


class RewardContext:
    """Binds a map and distance cache for reward evaluation.

    ``lifelong_goal_bonus`` optionally adds +1 on goal completion under the
    lifelong scheme (off by default: the path-follow reward is the only
    lifelong signal).
    """

    def __init__(self, grid: GridMap, cache: DistanceCache | None = None,
                 lifelong_goal_bonus: bool = False):
        self.grid = grid
        self.cache = cache or DistanceCache()
        self.lifelong_goal_bonus = lifelong_goal_bonus

    def moved_towards_goal(self, rec: TransitionRecord) -> bool:
        old = self.cache.distance(self.grid, rec.old_position, rec.goal)
        new = self.cache.distance(self.grid, rec.new_position, rec.goal)
        if old == UNREACHABLE or new == UNREACHABLE:
            return False
        return new < old


def compute_reward(scheme: RewardScheme, rec: TransitionRecord, ctx: RewardContext) -> float:
    if scheme is RewardScheme.LIFELONG_FOLLOW:
        reward = 0.01 if rec.followed_path else 0.0
        if rec.arrived and ctx.lifelong_goal_bonus:
            reward += 1.0
        return reward

    if rec.arrived:
        return 1.0
    if scheme is RewardScheme.SPARSE:
        return 0.0
    if scheme is RewardScheme.DENSE:
        return -0.01
    if scheme is RewardScheme.MOVING_NEGATIVE:
        return -0.01 if rec.moved else -0.005
    towards = ctx.moved_towards_goal(rec)
    if scheme is RewardScheme.DIRECTIONAL:
        return 0.005 if towards else 0.0
    if scheme is RewardScheme.DIRECTIONAL_NEGATIVE:
        return -0.005 if towards else -0.01
    raise ContractError(f"unhandled scheme {scheme}")
