"""Decentralized partially observable grid pathfinding environment.

Supports two episode modes: classical (agents arrive, then leave the world)
and lifelong (arrival immediately draws a fresh goal). Moves are resolved
simultaneously; any conflicting move degrades to holding the current cell.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from . import pathing
from .errors import ConfigError, ContractError
from .maps import Cell, GridMap, grid_from_json_dict, grid_to_json_dict

CLASSICAL = "classical"
LIFELONG = "lifelong"


class Action(IntEnum):
    STAY = 0
    UP = 1
    DOWN = 2
    LEFT = 3
    RIGHT = 4


ACTION_DELTAS = {
    Action.STAY: (0, 0),
    Action.UP: (-1, 0),
    Action.DOWN: (1, 0),
    Action.LEFT: (0, -1),
    Action.RIGHT: (0, 1),
}


@dataclass
class EnvConfig:
    mode: str = CLASSICAL
    obs_size: int = 5
    episode_length: int = 512

    def __post_init__(self):
        if self.mode not in (CLASSICAL, LIFELONG):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.obs_size % 2 == 0 or self.obs_size < 3:
            raise ConfigError(f"obs_size must be odd and >= 3, got {self.obs_size}")
        if self.episode_length < 1:
            raise ConfigError(f"episode_length must be positive, got {self.episode_length}")


@dataclass
class AgentState:
    position: Cell
    goal: Cell
    active: bool = True
    arrival_step: int | None = None
    planned_path: list[Cell] = field(default_factory=list)
    path_reachable: bool = True


@dataclass
class TransitionRecord:
    """Everything the reward schemes need about one agent step."""

    agent_index: int
    old_position: Cell
    new_position: Cell
    goal: Cell  # the goal in force during the step, before any resampling
    action: Action
    followed_path: bool
    arrived: bool
    moved: bool
    path_reachable: bool


class EnvState:
    """Full environment state for one episode; owned by a single worker."""

    def __init__(self, grid: GridMap, agents: list[AgentState], config: EnvConfig,
                 rng: np.random.Generator):
        self.grid = grid
        self.agents = agents
        self.config = config
        self.step_count = 0
        self.goals_reached = 0  # lifelong counter
        self.rng = rng

    @property
    def mode(self) -> str:
        return self.config.mode

    @property
    def episode_length(self) -> int:
        return self.config.episode_length

    def active_indices(self) -> list[int]:
        return [i for i, a in enumerate(self.agents) if a.active]

    def done(self) -> bool:
        if self.step_count >= self.episode_length:
            return True
        return self.mode == CLASSICAL and not any(a.active for a in self.agents)

    def snapshot(self) -> dict:
        """JSON-able state (planned paths are recomputed on restore)."""
        return {
            "map": grid_to_json_dict(self.grid),
            "config": {"mode": self.mode, "obs_size": self.config.obs_size,
                       "episode_length": self.episode_length},
            "step": self.step_count,
            "goals_reached": self.goals_reached,
            "agents": [{"position": list(a.position), "goal": list(a.goal),
                        "active": a.active, "arrival_step": a.arrival_step}
                       for a in self.agents],
            "rng_state": self.rng.bit_generator.state,
        }

    @classmethod
    def from_snapshot(cls, doc: dict) -> "EnvState":
        grid = grid_from_json_dict(doc["map"])
        config = EnvConfig(**doc["config"])
        agents = []
        for rec in doc["agents"]:
            agent = AgentState(position=tuple(rec["position"]), goal=tuple(rec["goal"]),
                               active=rec["active"], arrival_step=rec["arrival_step"])
            if agent.active:
                agent.planned_path, agent.path_reachable = pathing.replan_if_needed(
                    agent.position, agent.goal, [], grid)
            agents.append(agent)
        rng = np.random.default_rng(0)
        rng.bit_generator.state = doc["rng_state"]
        state = cls(grid, agents, config, rng)
        state.step_count = doc["step"]
        state.goals_reached = doc["goals_reached"]
        return state


def _sample_distinct(rng: np.random.Generator, cells: list[Cell], k: int) -> list[Cell]:
    idx = rng.choice(len(cells), size=k, replace=False)
    return [cells[int(i)] for i in np.atleast_1d(idx)]


def reset(grid: GridMap, starts: list[Cell] | None, goals: list[Cell] | None,
          config: EnvConfig, seed: int, num_agents: int | None = None
          ) -> tuple[EnvState, list[np.ndarray]]:
    """Start an episode; returns the state and one observation per agent.

    ``starts``/``goals`` may be None, in which case they are sampled from the
    free cells using ``seed``. Explicit starts must be free and pairwise
    distinct; goals must be free.
    """
    rng = np.random.default_rng(seed)
    free = None
    if starts is None:
        if num_agents is None:
            raise ConfigError("reset needs starts or num_agents")
        free = grid.free_cells()
        if len(free) < num_agents:
            raise ConfigError(f"{num_agents} agents need {num_agents} free cells, map has {len(free)}")
        starts = _sample_distinct(rng, free, num_agents)
    if goals is None:
        free = free or grid.free_cells()
        if config.mode == LIFELONG:
            goals = []
            for start in starts:
                choices = [c for c in free if c != start]
                goals.append(choices[int(rng.integers(len(choices)))])
        else:
            goals = _sample_distinct(rng, free, len(starts))

    if len(starts) != len(goals):
        raise ConfigError(f"{len(starts)} starts but {len(goals)} goals")
    if len(set(starts)) != len(starts):
        raise ConfigError("duplicate start cells")
    for i, (s, g) in enumerate(zip(starts, goals)):
        if not grid.is_free(s):
            raise ConfigError(f"agent {i} start {s} is not a free cell")
        if not grid.is_free(g):
            raise ConfigError(f"agent {i} goal {g} is not a free cell")

    agents = []
    for s, g in zip(starts, goals):
        agent = AgentState(position=s, goal=g)
        agent.planned_path, agent.path_reachable = pathing.replan_if_needed(s, g, [], grid)
        agents.append(agent)
    state = EnvState(grid, agents, config, rng)
    observations = [observe(state, i) for i in state.active_indices()]
    return state, observations


def resolve_collisions(positions: list[Cell], intended_targets: list[Cell],
                       grid: GridMap) -> list[Cell]:
    """Conflict-free final targets under the hold-on-conflict rule.

    Runs the rule set to a fixed point: blocked moves, shared target cells,
    and swaps all degrade to staying put, and reverts cascade (a move into a
    cell whose occupant ends up staying is itself reverted). The result has
    no vertex or edge conflicts and the function is idempotent.
    """
    n = len(positions)
    final: list[Cell] = []
    for pos, tgt in zip(positions, intended_targets):
        dr, dc = tgt[0] - pos[0], tgt[1] - pos[1]
        if abs(dr) + abs(dc) > 1:
            raise ContractError(f"intended target {tgt} is not adjacent to {pos}")
        final.append(pos if (tgt != pos and not grid.is_free(tgt)) else tgt)

    changed = True
    while changed:
        changed = False
        counts: dict[Cell, int] = {}
        for t in final:
            counts[t] = counts.get(t, 0) + 1
        for i in range(n):
            if final[i] != positions[i] and counts[final[i]] >= 2:
                final[i] = positions[i]
                changed = True
        for i in range(n):
            if final[i] == positions[i]:
                continue
            for j in range(n):
                if i != j and final[i] == positions[j] and final[j] == positions[i]:
                    final[i] = positions[i]
                    final[j] = positions[j]
                    changed = True
                    break
    return final


def step(state: EnvState, joint_action: list[Action]
         ) -> tuple[EnvState, list[np.ndarray], list[TransitionRecord], dict]:
    """Advance one time step for all active agents.

    ``joint_action`` carries one action per active agent, in ascending agent
    index order. Returns (state, observations for active agents, transition
    records, done flags). Goal completion is detected on the resolved
    position; in lifelong mode a fresh goal is drawn immediately.
    """
    active = state.active_indices()
    if len(joint_action) != len(active):
        raise ContractError(f"{len(active)} active agents but {len(joint_action)} actions")
    if state.step_count >= state.episode_length:
        raise ContractError("episode already over")

    positions = [state.agents[i].position for i in active]
    intended = []
    for pos, action in zip(positions, joint_action):
        dr, dc = ACTION_DELTAS[Action(action)]
        intended.append((pos[0] + dr, pos[1] + dc))
    final = resolve_collisions(positions, intended, state.grid)

    state.step_count += 1
    records: list[TransitionRecord] = []
    for idx, old_pos, new_pos, action in zip(active, positions, final, joint_action):
        agent = state.agents[idx]
        goal = agent.goal
        followed = len(agent.planned_path) >= 2 and new_pos == agent.planned_path[1]
        arrived = new_pos == goal
        records.append(TransitionRecord(
            agent_index=idx, old_position=old_pos, new_position=new_pos, goal=goal,
            action=Action(action), followed_path=followed, arrived=arrived,
            moved=new_pos != old_pos, path_reachable=agent.path_reachable))
        agent.position = new_pos
        if arrived:
            if state.mode == CLASSICAL:
                agent.arrival_step = state.step_count
                agent.active = False
                agent.planned_path = []
                continue
            state.goals_reached += 1
            agent.goal = _resample_goal(state, new_pos)
        agent.planned_path, agent.path_reachable = pathing.replan_if_needed(
            agent.position, agent.goal, agent.planned_path, state.grid)

    observations = [observe(state, i) for i in state.active_indices()]
    dones = {
        "episode": state.done(),
        "agents": {rec.agent_index: (state.mode == CLASSICAL and rec.arrived)
                   for rec in records},
    }
    return state, observations, records, dones


def _resample_goal(state: EnvState, exclude: Cell) -> Cell:
    free = state.grid.free_cells()
    choices = [c for c in free if c != exclude]
    if not choices:
        return exclude  # single-free-cell map; degenerate but legal
    return choices[int(state.rng.integers(len(choices)))]


def observe(state: EnvState, agent_index: int) -> np.ndarray:
    """Egocentric 3-channel window around one agent.

    Channel 0 carries obstacles (-1, out-of-bounds included) and the agent's
    planned path (+1); channel 1 the other active agents; channel 2 their
    goals plus the agent's own goal, projected onto the window boundary when
    it lies outside.
    """
    agent = state.agents[agent_index]
    if not agent.active:
        raise ContractError(f"agent {agent_index} is not active")
    m = state.config.obs_size
    radius = m // 2
    pr, pc = agent.position
    obs = np.zeros((3, m, m))

    grid = state.grid
    blocked = np.ones((m, m), dtype=bool)
    r0, r1 = pr - radius, pr + radius + 1
    c0, c1 = pc - radius, pc + radius + 1
    gr0, gc0 = max(r0, 0), max(c0, 0)
    gr1, gc1 = min(r1, grid.height), min(c1, grid.width)
    if gr0 < gr1 and gc0 < gc1:
        blocked[gr0 - r0:gr1 - r0, gc0 - c0:gc1 - c0] = \
            grid.obstacles[gr0:gr1, gc0:gc1]
    obs[0][blocked] = -1.0

    for cell in agent.planned_path:
        dr, dc = cell[0] - pr, cell[1] - pc
        if abs(dr) <= radius and abs(dc) <= radius:
            obs[0][dr + radius, dc + radius] = 1.0

    for j, other in enumerate(state.agents):
        if j == agent_index or not other.active:
            continue
        dr, dc = other.position[0] - pr, other.position[1] - pc
        if abs(dr) <= radius and abs(dc) <= radius:
            obs[1][dr + radius, dc + radius] = 1.0
        gdr, gdc = other.goal[0] - pr, other.goal[1] - pc
        if abs(gdr) <= radius and abs(gdc) <= radius:
            obs[2][gdr + radius, gdc + radius] = 1.0

    gdr, gdc = agent.goal[0] - pr, agent.goal[1] - pc
    span = max(abs(gdr), abs(gdc))
    if span <= radius:
        obs[2][gdr + radius, gdc + radius] = 1.0
    else:
        # Project onto the window boundary along the straight line to the goal.
        scale = radius / span
        rr = int(np.sign(gdr) * np.floor(abs(gdr) * scale + 0.5))
        cc = int(np.sign(gdc) * np.floor(abs(gdc) * scale + 0.5))
        rr = max(-radius, min(radius, rr))
        cc = max(-radius, min(radius, cc))
        obs[2][rr + radius, cc + radius] = 1.0
    return obs


class EpisodeTraceWriter:
    """Accumulates per-step records and writes them as JSON lines."""

    def __init__(self):
        self.lines: list[dict] = []

    def add_step(self, state: EnvState, records: list[TransitionRecord],
                 rewards: dict[int, float] | None = None) -> None:
        rewards = rewards or {}
        self.lines.append({
            "step": state.step_count,
            "positions": [list(a.position) if a.active or state.mode == LIFELONG else None
                          for a in state.agents],
            "actions": {rec.agent_index: int(rec.action) for rec in records},
            "rewards": {rec.agent_index: rewards.get(rec.agent_index) for rec in records},
            "arrivals": [a.arrival_step for a in state.agents],
        })

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for line in self.lines:
                fh.write(json.dumps(line) + "\n")
