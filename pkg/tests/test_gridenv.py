"""Environment semantics: reset, stepping, collisions, observations."""

import itertools

import numpy as np
import pytest

from srmtlab import gridenv, maps
from srmtlab.errors import ConfigError, ContractError
from srmtlab.gridenv import Action, EnvConfig


def open_grid(h, w):
    return maps.GridMap(np.zeros((h, w), dtype=bool))


class TestReset:
    def test_bottleneck_reset(self):
        grid, starts, goals = maps.gen_bottleneck(maps.BottleneckSpec(3), seed=0)
        state, obs = gridenv.reset(grid, starts, goals, EnvConfig(), seed=0)
        assert state.step_count == 0
        assert all(a.active for a in state.agents)
        assert len(obs) == 2
        for o in obs:
            assert o.shape == (3, 5, 5)

    def test_lifelong_reset_deterministic(self):
        grid = maps.gen_maze(9, 9, seed=4)
        cfg = EnvConfig(mode=gridenv.LIFELONG)
        a, _ = gridenv.reset(grid, None, None, cfg, seed=11, num_agents=3)
        b, _ = gridenv.reset(grid, None, None, cfg, seed=11, num_agents=3)
        assert [ag.goal for ag in a.agents] == [ag.goal for ag in b.agents]
        assert [ag.position for ag in a.agents] == [ag.position for ag in b.agents]

    def test_start_on_obstacle_rejected(self):
        obstacles = np.zeros((3, 3), dtype=bool)
        obstacles[1, 1] = True
        grid = maps.GridMap(obstacles)
        with pytest.raises(ConfigError):
            gridenv.reset(grid, [(1, 1)], [(0, 0)], EnvConfig(), seed=0)

    def test_duplicate_starts_rejected(self):
        with pytest.raises(ConfigError):
            gridenv.reset(open_grid(3, 3), [(0, 0), (0, 0)], [(2, 2), (1, 1)],
                          EnvConfig(), seed=0)


class TestStep:
    def test_single_move_right(self):
        state, _ = gridenv.reset(open_grid(5, 5), [(2, 2)], [(4, 4)], EnvConfig(), seed=0)
        state, _, records, _ = gridenv.step(state, [Action.RIGHT])
        assert state.agents[0].position == (2, 3)
        assert records[0].moved

    def test_move_into_obstacle_holds(self):
        obstacles = np.zeros((3, 3), dtype=bool)
        obstacles[1, 2] = True
        grid = maps.GridMap(obstacles)
        state, _ = gridenv.reset(grid, [(1, 1)], [(0, 0)], EnvConfig(), seed=0)
        state, _, records, _ = gridenv.step(state, [Action.RIGHT])
        assert state.agents[0].position == (1, 1)
        assert not records[0].moved

    def test_edge_conflict_both_hold(self):
        state, _ = gridenv.reset(open_grid(1, 4), [(0, 1), (0, 2)], [(0, 3), (0, 0)],
                                 EnvConfig(), seed=0)
        state, _, records, _ = gridenv.step(state, [Action.RIGHT, Action.LEFT])
        assert state.agents[0].position == (0, 1)
        assert state.agents[1].position == (0, 2)

    def test_arrival_deactivates_in_classical(self):
        state, _ = gridenv.reset(open_grid(1, 3), [(0, 0)], [(0, 1)], EnvConfig(), seed=0)
        state, obs, records, dones = gridenv.step(state, [Action.RIGHT])
        assert records[0].arrived
        assert not state.agents[0].active
        assert state.agents[0].arrival_step == 1
        assert dones["episode"]
        assert obs == []

    def test_lifelong_resamples_goal(self):
        cfg = EnvConfig(mode=gridenv.LIFELONG, episode_length=16)
        state, _ = gridenv.reset(open_grid(1, 4), [(0, 0)], [(0, 1)], cfg, seed=0)
        state, _, records, _ = gridenv.step(state, [Action.RIGHT])
        assert records[0].arrived
        assert state.agents[0].active
        assert state.goals_reached == 1
        assert state.agents[0].goal != (0, 1)

    def test_action_count_mismatch(self):
        state, _ = gridenv.reset(open_grid(2, 2), [(0, 0)], [(1, 1)], EnvConfig(), seed=0)
        with pytest.raises(ContractError):
            gridenv.step(state, [Action.STAY, Action.STAY])

    def test_followed_path_flag(self):
        state, _ = gridenv.reset(open_grid(1, 5), [(0, 0)], [(0, 4)], EnvConfig(), seed=0)
        _, _, records, _ = gridenv.step(state, [Action.RIGHT])
        assert records[0].followed_path
        _, _, records, _ = gridenv.step(state, [Action.STAY])
        assert not records[0].followed_path

    def test_same_seed_same_trace(self):
        grid = maps.gen_random(8, 8, 0.2, seed=7)
        actions = np.random.default_rng(1).integers(0, 5, size=(20, 2))
        traces = []
        for _ in range(2):
            cfg = EnvConfig(mode=gridenv.LIFELONG, episode_length=32)
            state, _ = gridenv.reset(grid, None, None, cfg, seed=5, num_agents=2)
            trail = []
            for row in actions:
                state, _, _, _ = gridenv.step(state, [Action(a) for a in row])
                trail.append(tuple(a.position for a in state.agents)
                             + tuple(a.goal for a in state.agents))
            traces.append(trail)
        assert traces[0] == traces[1]


class TestResolveCollisions:
    def test_no_conflicts_identity(self):
        grid = open_grid(3, 3)
        positions = [(0, 0), (2, 2)]
        targets = [(0, 1), (2, 1)]
        assert gridenv.resolve_collisions(positions, targets, grid) == targets

    def test_three_into_one_all_hold(self):
        grid = open_grid(3, 3)
        positions = [(0, 1), (1, 0), (1, 2)]
        targets = [(1, 1), (1, 1), (1, 1)]
        out = gridenv.resolve_collisions(positions, targets, grid)
        assert out == positions

    def test_cascade_behind_blocked_agent(self):
        # B walks into an obstacle and holds; A, moving into B's cell, must hold too.
        obstacles = np.zeros((1, 4), dtype=bool)
        obstacles[0, 3] = True
        grid = maps.GridMap(obstacles)
        positions = [(0, 1), (0, 2)]
        targets = [(0, 2), (0, 3)]
        out = gridenv.resolve_collisions(positions, targets, grid)
        assert out == positions

    def test_rotating_chain_allowed(self):
        # A follows B who moves away: no conflict, both moves stand.
        grid = open_grid(1, 4)
        positions = [(0, 0), (0, 1)]
        targets = [(0, 1), (0, 2)]
        out = gridenv.resolve_collisions(positions, targets, grid)
        assert out == targets

    def test_idempotent(self):
        grid = open_grid(3, 3)
        positions = [(0, 0), (0, 2), (1, 1)]
        targets = [(0, 1), (0, 1), (0, 1)]
        out = gridenv.resolve_collisions(positions, targets, grid)
        assert gridenv.resolve_collisions(positions, out, grid) == out

    def test_non_adjacent_target_rejected(self):
        with pytest.raises(ContractError):
            gridenv.resolve_collisions([(0, 0)], [(2, 2)], open_grid(3, 3))


def fuzz_step_safety(num_steps, seed, num_agents_range=(2, 16)):
    """Shared fuzz harness: random maps, random joint actions."""
    rng = np.random.default_rng(seed)
    steps_done = 0
    while steps_done < num_steps:
        n = int(rng.integers(*num_agents_range, endpoint=True))
        grid = maps.gen_random(12, 12, 0.25, seed=int(rng.integers(1 << 30)))
        cfg = EnvConfig(mode=gridenv.LIFELONG, episode_length=1 << 30)
        state, _ = gridenv.reset(grid, None, None, cfg, seed=int(rng.integers(1 << 30)),
                                 num_agents=n)
        for _ in range(min(50, num_steps - steps_done)):
            before = {i: state.agents[i].position for i in state.active_indices()}
            actions = [Action(int(a)) for a in rng.integers(0, 5, size=len(before))]

            # Idempotence of the resolver on this exact input.
            positions = [before[i] for i in sorted(before)]
            intended = []
            for pos, act in zip(positions, actions):
                dr, dc = gridenv.ACTION_DELTAS[act]
                intended.append((pos[0] + dr, pos[1] + dc))
            resolved = gridenv.resolve_collisions(positions, intended, grid)
            assert gridenv.resolve_collisions(positions, resolved, grid) == resolved

            state, _, _, _ = gridenv.step(state, actions)
            after = {i: state.agents[i].position for i in state.active_indices()}

            cells = list(after.values())
            assert len(cells) == len(set(cells)), "vertex conflict"
            for i, j in itertools.combinations(after, 2):
                swapped = after[i] == before[j] and after[j] == before[i] \
                    and before[i] != before[j]
                assert not swapped, "edge conflict"
            steps_done += 1


def test_collision_safety_fuzz_small():
    fuzz_step_safety(2000, seed=0)


class TestObserve:
    def test_lone_agent_channel1_empty(self):
        state, _ = gridenv.reset(open_grid(9, 9), [(4, 4)], [(5, 5)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        assert np.all(obs[1] == 0.0)

    def test_wall_padding(self):
        state, _ = gridenv.reset(open_grid(9, 9), [(4, 0)], [(4, 8)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        # Two leftmost window columns fall outside the map.
        assert np.all(obs[0][:, :2] == -1.0)

    def test_other_agent_at_offset(self):
        state, _ = gridenv.reset(open_grid(9, 9), [(4, 4), (4, 6)], [(0, 0), (8, 8)],
                                 EnvConfig(), seed=0)
        obs0 = gridenv.observe(state, 0)
        assert obs0[1][2, 4] == 1.0  # two columns to the right of center
        assert obs0[1].sum() == 1.0
        obs1 = gridenv.observe(state, 1)
        assert obs1[1][2, 0] == 1.0
        assert obs1[1].sum() == 1.0

    def test_entries_in_allowed_set(self):
        grid = maps.gen_random(10, 10, 0.3, seed=1)
        cfg = EnvConfig(mode=gridenv.LIFELONG)
        state, obs = gridenv.reset(grid, None, None, cfg, seed=2, num_agents=4)
        for o in obs:
            assert o.shape == (3, 5, 5)
            assert set(np.unique(o)).issubset({-1.0, 0.0, 1.0})

    def test_own_goal_inside_window(self):
        state, _ = gridenv.reset(open_grid(9, 9), [(4, 4)], [(3, 5)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        assert obs[2][1, 3] == 1.0

    def test_own_goal_projected_to_boundary(self):
        state, _ = gridenv.reset(open_grid(9, 9), [(4, 0)], [(4, 8)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        # Goal is straight right, outside the window: boundary center-right cell.
        assert obs[2][2, 4] == 1.0

    def test_diagonal_projection(self):
        state, _ = gridenv.reset(open_grid(21, 21), [(10, 10)], [(16, 16)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        assert obs[2][4, 4] == 1.0

    def test_inactive_agent_rejected(self):
        state, _ = gridenv.reset(open_grid(1, 3), [(0, 0)], [(0, 1)], EnvConfig(), seed=0)
        gridenv.step(state, [Action.RIGHT])
        with pytest.raises(ContractError):
            gridenv.observe(state, 0)

    def test_path_channel_marks_route(self):
        state, _ = gridenv.reset(open_grid(1, 9), [(0, 4)], [(0, 8)], EnvConfig(), seed=0)
        obs = gridenv.observe(state, 0)
        assert obs[0][2, 2] == 1.0  # own cell on path
        assert obs[0][2, 3] == 1.0 and obs[0][2, 4] == 1.0


class TestSnapshot:
    def test_roundtrip_preserves_trace(self):
        grid = maps.gen_random(8, 8, 0.2, seed=9)
        cfg = EnvConfig(mode=gridenv.LIFELONG, episode_length=64)
        state, _ = gridenv.reset(grid, None, None, cfg, seed=3, num_agents=2)
        rng = np.random.default_rng(0)
        for _ in range(5):
            acts = [Action(int(a)) for a in rng.integers(0, 5, size=2)]
            state, _, _, _ = gridenv.step(state, acts)
        restored = gridenv.EnvState.from_snapshot(state.snapshot())
        for _ in range(10):
            acts = [Action(int(a)) for a in rng.integers(0, 5, size=2)]
            state, _, ra, _ = gridenv.step(state, list(acts))
            restored, _, rb, _ = gridenv.step(restored, list(acts))
            assert [(r.new_position, r.goal) for r in ra] == \
                   [(r.new_position, r.goal) for r in rb]


class TestTraceWriter:
    def test_jsonl_output(self, tmp_path):
        import json
        state, _ = gridenv.reset(open_grid(1, 4), [(0, 0)], [(0, 3)], EnvConfig(), seed=0)
        writer = gridenv.EpisodeTraceWriter()
        for _ in range(2):
            state, _, records, _ = gridenv.step(state, [Action.RIGHT])
            writer.add_step(state, records, rewards={0: 0.005})
        out = tmp_path / "trace.jsonl"
        writer.write(out)
        lines = [json.loads(line) for line in out.read_text().splitlines()]
        assert len(lines) == 2
        assert lines[0]["step"] == 1
        assert lines[1]["positions"][0] == [0, 2]
