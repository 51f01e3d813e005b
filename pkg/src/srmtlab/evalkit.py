"""Episode evaluation: metrics, corridor-generalization sweeps, memory traces."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .errors import ContractError
from .gridenv import CLASSICAL, LIFELONG, Action, EnvConfig, observe, reset, step
from .maps import BottleneckSpec, Cell, GridMap, gen_bottleneck
from .pathing import shortest_path
from .policy.network import Policy


@dataclass
class EpisodeRecord:
    """Everything the metrics need about one finished episode."""

    map_name: str
    mode: str
    num_agents: int
    episode_length: int
    obs_size: int
    arrival_steps: list
    positions: list            # positions[t][i]: cell or None once agent i left
    goals: list                # initial goal of each agent
    goals_reached: int
    runtime_seconds: float
    moves: list
    memories: list | None = None  # memories[t]: (n, k*d) array when recorded
    grid: GridMap | None = None


@dataclass
class MetricReport:
    metric: str
    value: float
    ci95: float
    n: int
    group: str = ""


def aggregate(metric: str, values: list[float], group: str = "") -> MetricReport:
    """Mean with a 95% normal-approximation confidence half-width over seeds."""
    arr = np.asarray(values, dtype=np.float64)
    n = arr.size
    ci = 0.0 if n < 2 else 1.96 * float(arr.std(ddof=1)) / math.sqrt(n)
    return MetricReport(metric=metric, value=float(arr.mean()), ci95=ci, n=n, group=group)


# -- per-episode metrics ------------------------------------------------------


def _require_mode(episode: EpisodeRecord, mode: str, op: str) -> None:
    if episode.mode != mode:
        raise ContractError(f"{op} is defined for {mode} episodes, got {episode.mode}")


def csr(episode: EpisodeRecord) -> float:
    _require_mode(episode, CLASSICAL, "csr")
    return 1.0 if all(a is not None for a in episode.arrival_steps) else 0.0


def isr(episode: EpisodeRecord) -> float:
    _require_mode(episode, CLASSICAL, "isr")
    arrived = sum(1 for a in episode.arrival_steps if a is not None)
    return arrived / episode.num_agents


def soc(episode: EpisodeRecord) -> float:
    """Sum of per-agent costs; non-arriving agents pay the full episode."""
    _require_mode(episode, CLASSICAL, "soc")
    return float(sum(a if a is not None else episode.episode_length
                     for a in episode.arrival_steps))


def throughput(episode: EpisodeRecord) -> float:
    _require_mode(episode, LIFELONG, "throughput")
    return episode.goals_reached / episode.episode_length


def congestion(episodes: list[EpisodeRecord]) -> float:
    """Mean ratio of locally observed agent density to the map-wide density.

    Both densities exclude the observing agent itself (the observation shows
    only the others), so uniformly spread agents score 1 in expectation.
    """
    samples = []
    for ep in episodes:
        if ep.grid is None:
            raise ContractError("congestion needs episodes recorded with their grid")
        radius = ep.obs_size // 2
        map_free = len(ep.grid.free_cells())
        for row in ep.positions:
            present = [p for p in row if p is not None]
            if not present:
                continue
            global_density = (len(present) - 1) / map_free
            for me in present:
                visible = sum(1 for q in present
                              if q is not me and abs(q[0] - me[0]) <= radius
                              and abs(q[1] - me[1]) <= radius)
                # Count the same things the observation window shows: other
                # agents over the free cells inside the window.
                window_free = _free_in_window(ep.grid, me, radius)
                local_density = visible / window_free if window_free else 0.0
                samples.append(local_density / global_density if global_density > 0 else 0.0)
    return float(np.mean(samples)) if samples else 0.0


def _free_in_window(grid: GridMap, center: Cell, radius: int) -> int:
    r0, r1 = max(0, center[0] - radius), min(grid.height, center[0] + radius + 1)
    c0, c1 = max(0, center[1] - radius), min(grid.width, center[1] + radius + 1)
    return int((~grid.obstacles[r0:r1, c0:c1]).sum())


def pathfinding_optimal(grid: GridMap, episode: EpisodeRecord) -> float:
    """1 iff the lone agent reached its goal in shortest-path many moves."""
    _require_mode(episode, CLASSICAL, "pathfinding_optimal")
    if episode.num_agents != 1:
        raise ContractError("pathfinding_optimal needs a single-agent episode")
    if episode.arrival_steps[0] is None:
        return 0.0
    start = tuple(episode.positions[0][0])
    path = shortest_path(grid, start, tuple(episode.goals[0]))
    if path is None:
        return 0.0
    return 1.0 if episode.moves[0] == len(path) - 1 else 0.0


def scalability(runtimes: list[tuple[int, float]]) -> float:
    """Runtime growth vs agent-count growth; 1.0 means perfectly linear."""
    if len(runtimes) < 2:
        raise ContractError("scalability needs at least two agent counts")
    pts = sorted(runtimes)
    n0, t0 = pts[0]
    ratios = [(n / n0) / (t / t0) for n, t in pts[1:]]
    return float(np.mean(ratios))


def performance_ratio(own: float, references: list[float]) -> float:
    best = max([own] + list(references))
    if best <= 0.0:
        return 1.0
    return own / best


# -- memory traces ------------------------------------------------------------


def memory_trace(episode: EpisodeRecord) -> list[dict]:
    """Align memory-vector distances with map distances, step by step.

    One row per step per agent pair with the cosine distance between their
    memory vectors, the Euclidean distance between their grid positions, and
    two event flags: the first step the agents face each other (mutually
    visible and closing in) and the step the first goal was achieved.
    """
    if episode.memories is None:
        raise ContractError("memory recording was not enabled for this episode")
    n = episode.num_agents
    radius = episode.obs_size // 2
    arrivals = [a for a in episode.arrival_steps if a is not None]
    first_goal_step = min(arrivals) if arrivals else None
    rows = []
    facing_seen: set[tuple[int, int]] = set()
    prev_dist: dict[tuple[int, int], float] = {}
    for t, (row, mems) in enumerate(zip(episode.positions, episode.memories)):
        for i in range(n):
            for j in range(i + 1, n):
                if row[i] is None or row[j] is None:
                    continue
                a, b = np.asarray(mems[i], dtype=float), np.asarray(mems[j], dtype=float)
                na, nb = np.linalg.norm(a), np.linalg.norm(b)
                cos_dist = None if na == 0.0 or nb == 0.0 else \
                    float(1.0 - float(a @ b) / (na * nb))
                euclid = float(math.dist(row[i], row[j]))
                pair = (i, j)
                facing = False
                if pair not in facing_seen and pair in prev_dist:
                    visible = abs(row[i][0] - row[j][0]) <= radius \
                        and abs(row[i][1] - row[j][1]) <= radius
                    if visible and euclid < prev_dist[pair]:
                        facing = True
                        facing_seen.add(pair)
                prev_dist[pair] = euclid
                rows.append({
                    "step": t,
                    "pair": f"{i}-{j}",
                    "cosine_distance": cos_dist,
                    "euclidean_distance": euclid,
                    "facing_event": facing,
                    "first_goal_event": first_goal_step is not None and t == first_goal_step,
                })
    return rows


def write_memory_trace_csv(rows: list[dict], path) -> None:
    headers = ["step", "pair", "cosine_distance", "euclidean_distance",
               "facing_event", "first_goal_event"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=headers)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            if out["cosine_distance"] is None:
                out["cosine_distance"] = ""
            writer.writerow(out)


# -- running episodes under a policy -----------------------------------------


def run_episode(policy: Policy, grid: GridMap, starts, goals, env_cfg: EnvConfig,
                seed: int, record_memory: bool = False, greedy: bool = False,
                num_agents: int | None = None) -> EpisodeRecord:
    """Roll one episode with the policy; all agents share the parameters."""
    pcfg = policy.cfg
    state, observations = reset(grid, starts, goals, env_cfg, seed,
                                num_agents=num_agents)
    n = len(state.agents)
    initial_goals = [a.goal for a in state.agents]
    action_rng = np.random.default_rng([seed, 104729])
    emb = policy.encode(np.stack(observations))
    memories = {i: m for i, m in zip(state.active_indices(),
                                     policy.init_memory(emb).data)}
    histories: dict[int, list[np.ndarray]] = {i: [] for i in range(n)}
    current_obs = dict(zip(state.active_indices(), observations))
    moves = [0] * n
    positions = [[a.position for a in state.agents]]
    mem_log = [_memory_row(memories, n, pcfg)] if record_memory else None

    t0 = time.perf_counter()
    while not state.done():
        active = state.active_indices()
        b = len(active)
        obs = np.stack([current_obs[i] for i in active])
        hist = np.zeros((b, pcfg.history_len, pcfg.d))
        hist_mask = np.zeros((b, pcfg.history_len))
        mems = np.zeros((b, pcfg.memory_tokens, pcfg.d))
        for row, i in enumerate(active):
            filled = len(histories[i])
            if filled:
                hist[row, :filled] = np.stack(histories[i])
                hist_mask[row, :filled] = 1.0
            mems[row] = memories[i]
        entries = mems.reshape(b * pcfg.memory_tokens, pcfg.d)
        pool = np.repeat(entries[None], b, axis=0)
        emb = policy.encode(obs)
        logits, _, next_mem = policy.core_forward(
            emb, nk.Tensor(hist), hist_mask, nk.Tensor(mems),
            nk.Tensor(pool), np.ones((b, entries.shape[0])))
        probs = _softmax(logits.data)
        if greedy:
            actions = probs.argmax(axis=1)
        else:
            u = action_rng.random(b)
            actions = np.array([min(int(np.searchsorted(np.cumsum(p), x, side="right")),
                                    probs.shape[1] - 1) for p, x in zip(probs, u)])

        state, new_obs, records, _ = step(state, [Action(int(a)) for a in actions])
        obs_map = dict(zip(state.active_indices(), new_obs))
        for row, rec in enumerate(records):
            i = rec.agent_index
            if rec.moved:
                moves[i] += 1
            histories[i].append(emb.data[row])
            if len(histories[i]) > pcfg.history_len:
                histories[i].pop(0)
            memories[i] = next_mem.data[row]
            if state.agents[i].active:
                current_obs[i] = obs_map[i]
        positions.append([a.position if a.active or state.mode == LIFELONG else None
                          for a in state.agents])
        if record_memory:
            mem_log.append(_memory_row(memories, n, pcfg))
    runtime = time.perf_counter() - t0

    return EpisodeRecord(
        map_name=grid.name or "map", mode=state.mode, num_agents=n,
        episode_length=env_cfg.episode_length, obs_size=env_cfg.obs_size,
        arrival_steps=[a.arrival_step for a in state.agents],
        positions=positions, goals=initial_goals, goals_reached=state.goals_reached,
        runtime_seconds=runtime, moves=moves, memories=mem_log, grid=grid)


def _memory_row(memories: dict, n: int, pcfg) -> np.ndarray:
    out = np.zeros((n, pcfg.memory_tokens * pcfg.d))
    for i, mem in memories.items():
        out[i] = np.asarray(mem).reshape(-1)
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


# -- sweeps --------------------------------------------------------------------


def sweep_corridors(policy: Policy, lengths: list[int], seeds: list[int],
                    room_size: int = 5, record_memory: bool = False,
                    greedy: bool = False) -> tuple[list[MetricReport], list[EpisodeRecord]]:
    """Bottleneck generalization sweep; episode budget scales with length."""
    reports: list[MetricReport] = []
    episodes: list[EpisodeRecord] = []
    for length in lengths:
        env_cfg = EnvConfig(mode=CLASSICAL, obs_size=policy.cfg.obs_size,
                            episode_length=episode_budget(length))
        per_seed = {"csr": [], "isr": [], "soc": []}
        for seed in seeds:
            grid, starts, goals = gen_bottleneck(BottleneckSpec(length, room_size), seed)
            episode = run_episode(policy, grid, starts, goals, env_cfg, seed,
                                  record_memory=record_memory, greedy=greedy)
            episodes.append(episode)
            per_seed["csr"].append(csr(episode))
            per_seed["isr"].append(isr(episode))
            per_seed["soc"].append(soc(episode))
        group = str(length)
        for metric, values in per_seed.items():
            reports.append(aggregate(metric, values, group=group))
    return reports, episodes


def episode_budget(corridor_len: int) -> int:
    """Episode length granted for a corridor of the given length."""
    return 2 * corridor_len + 100


def evaluate_maps(policy: Policy, grids: list[GridMap], seeds: list[int],
                  mode: str, num_agents: int, episode_length: int,
                  record_memory: bool = False, greedy: bool = False
                  ) -> tuple[list[MetricReport], list[EpisodeRecord]]:
    reports: list[MetricReport] = []
    episodes: list[EpisodeRecord] = []
    env_cfg = EnvConfig(mode=mode, obs_size=policy.cfg.obs_size,
                        episode_length=episode_length)
    for grid in grids:
        metrics: dict[str, list[float]] = {}
        for seed in seeds:
            episode = run_episode(policy, grid, None, None, env_cfg, seed,
                                  record_memory=record_memory, greedy=greedy,
                                  num_agents=num_agents)
            episodes.append(episode)
            if mode == CLASSICAL:
                metrics.setdefault("csr", []).append(csr(episode))
                metrics.setdefault("isr", []).append(isr(episode))
                metrics.setdefault("soc", []).append(soc(episode))
            else:
                metrics.setdefault("throughput", []).append(throughput(episode))
        for metric, values in metrics.items():
            reports.append(aggregate(metric, values, group=grid.name or "map"))
    return reports, episodes


def write_reports_csv(reports: list[MetricReport], path, group_column: str = "config") -> None:
    """One row per metric per configuration."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([group_column, "metric", "value", "ci95", "n"])
        for report in reports:
            writer.writerow([report.group, report.metric,
                             f"{report.value:.10g}", f"{report.ci95:.10g}", report.n])
