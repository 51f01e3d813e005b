"""Vectorized rollout collection over a pool of environments.

Every environment advances in lockstep; all active agents across the pool
are evaluated in one batched policy forward per step, each against its own
environment's frozen memory pool. Workers are realized as deterministic
shards of one synchronous pool (see the decisions ledger).

Trajectories are recorded per (environment, agent) and cut at episode
boundaries; the batch later chunks them into fixed-length segments for the
truncated-recurrence PPO update. Each piece carries the raw observation
context preceding it so segment re-forwards can rebuild history embeddings
under the new parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..config import ExperimentConfig
from ..errors import ContractError
from ..gridenv import Action, EnvConfig, EnvState, observe, reset, step
from ..maps import GridMap, gen_bottleneck, gen_maze, gen_random, grid_from_json_dict
from ..policy.network import Policy
from ..rewards import RewardContext, RewardScheme, compute_reward
from .gae import compute_gae


def _rng(*entropy) -> np.random.Generator:
    return np.random.default_rng(list(entropy))


@dataclass
class TrajectoryPiece:
    """A contiguous run of one agent's transitions within one episode."""

    obs: np.ndarray            # (context + T, C, m, m); first context_len rows precede the piece
    context_len: int
    episode_start_offset: int  # episode step index of the first piece transition
    actions: np.ndarray        # (T,)
    behavior_logits: np.ndarray  # (T, A)
    behavior_logp: np.ndarray  # (T,)
    values: np.ndarray         # (T,)
    rewards: np.ndarray        # (T,)
    dones: np.ndarray          # (T,)
    memory_before: np.ndarray  # (T, k, d)
    pools: list                # per step: (P, d) array read by this agent
    bootstrap_value: float
    env_index: int
    agent_index: int

    @property
    def length(self) -> int:
        return len(self.actions)


@dataclass
class EpisodeStats:
    """Aggregates for episodes that finished during collection."""

    csr: float
    isr: float
    soc: float
    throughput: float
    length: int
    mode: str


@dataclass
class RolloutBatch:
    pieces: list[TrajectoryPiece]
    episode_stats: list[EpisodeStats]
    transitions: int
    mean_reward: float

    def advantages_and_returns(self, gamma: float, lam: float
                               ) -> tuple[list[np.ndarray], list[np.ndarray]]:
        adv, ret = [], []
        for piece in self.pieces:
            a, r = compute_gae(piece.rewards, piece.values, piece.dones, gamma, lam,
                               bootstrap_value=piece.bootstrap_value)
            adv.append(a)
            ret.append(r)
        return adv, ret


class _AgentRuntime:
    """Recurrent state one agent carries across steps of an episode."""

    def __init__(self, history_len: int):
        self.history_len = history_len
        self.raw_obs: list[np.ndarray] = []     # last <= history_len acted-on observations
        self.emb_history: list[np.ndarray] = []  # embeddings of raw_obs, same order
        self.memory: np.ndarray | None = None    # (k, d)
        self.current_obs: np.ndarray | None = None
        self.episode_step = 0                    # transitions taken so far this episode
        self.open: "_OpenTrajectory | None" = None

    def push_history(self, obs: np.ndarray, emb: np.ndarray) -> None:
        self.raw_obs.append(obs)
        self.emb_history.append(emb)
        if len(self.raw_obs) > self.history_len:
            self.raw_obs.pop(0)
            self.emb_history.pop(0)


class _OpenTrajectory:
    def __init__(self, context_obs: list[np.ndarray], episode_start_offset: int):
        self.context_obs = [o.copy() for o in context_obs]
        self.episode_start_offset = episode_start_offset
        self.obs: list[np.ndarray] = []
        self.actions: list[int] = []
        self.logits: list[np.ndarray] = []
        self.logp: list[float] = []
        self.values: list[float] = []
        self.rewards: list[float] = []
        self.dones: list[float] = []
        self.memory: list[np.ndarray] = []
        self.pools: list[np.ndarray] = []

    def close(self, bootstrap: float, env_index: int, agent_index: int) -> TrajectoryPiece:
        stack = self.context_obs + self.obs
        return TrajectoryPiece(
            obs=np.stack(stack), context_len=len(self.context_obs),
            episode_start_offset=self.episode_start_offset,
            actions=np.array(self.actions, dtype=np.int64),
            behavior_logits=np.stack(self.logits),
            behavior_logp=np.array(self.logp),
            values=np.array(self.values),
            rewards=np.array(self.rewards),
            dones=np.array(self.dones),
            memory_before=np.stack(self.memory),
            pools=self.pools,
            bootstrap_value=bootstrap, env_index=env_index, agent_index=agent_index)


class _EnvSlot:
    def __init__(self, index: int):
        self.index = index
        self.state: EnvState | None = None
        self.runtimes: dict[int, _AgentRuntime] = {}
        self.action_rng: np.random.Generator | None = None
        self.episode_index = 0


class EnvPool:
    """A shared policy stepping ``workers * envs_per_worker`` environments."""

    def __init__(self, cfg: ExperimentConfig, maps: list, policy: Policy):
        self.cfg = cfg
        self.maps = maps  # bottleneck entries are (grid, starts, goals); others GridMap
        self.policy = policy
        self.reward_scheme = RewardScheme.from_name(cfg.reward_scheme)
        self.num_envs = cfg.ppo.workers * cfg.ppo.envs_per_worker
        self.slots = [_EnvSlot(i) for i in range(self.num_envs)]
        self._contexts: dict = {}
        for slot in self.slots:
            self._start_episode(slot)

    # -- episode lifecycle -------------------------------------------------

    def _start_episode(self, slot: _EnvSlot) -> None:
        cfg = self.cfg
        setup_rng = _rng(cfg.seed, slot.index, slot.episode_index, 2)
        entry = self.maps[int(setup_rng.integers(len(self.maps)))]
        if isinstance(entry, tuple):
            grid, starts, goals = entry
            starts, goals = list(starts), list(goals)
        else:
            grid, starts, goals = entry, None, None
        env_cfg = EnvConfig(mode=cfg.mode, obs_size=cfg.policy.obs_size,
                            episode_length=cfg.episode_length)
        env_seed = int(_rng(cfg.seed, slot.index, slot.episode_index, 0).integers(1 << 62))
        state, observations = reset(grid, starts, goals, env_cfg, env_seed,
                                    num_agents=cfg.num_agents)
        slot.state = state
        slot.action_rng = _rng(cfg.seed, slot.index, slot.episode_index, 1)
        slot.runtimes = {}
        emb = self.policy.encode(np.stack(observations))
        init_mem = self.policy.init_memory(emb).data
        for row, agent_idx in enumerate(state.active_indices()):
            runtime = _AgentRuntime(cfg.policy.history_len)
            runtime.memory = init_mem[row].copy()
            runtime.current_obs = observations[row]
            slot.runtimes[agent_idx] = runtime
        slot.episode_index += 1

    def _reward_context(self, grid: GridMap) -> RewardContext:
        key = grid.key()
        if key not in self._contexts:
            self._contexts[key] = RewardContext(grid,
                                                lifelong_goal_bonus=self.cfg.lifelong_goal_bonus)
        return self._contexts[key]

    # -- batched forward ----------------------------------------------------

    def _forward_rows(self) -> tuple[list[tuple[int, int]], dict]:
        """One batched policy forward over every active agent in the pool."""
        cfg = self.cfg.policy
        rows: list[tuple[int, int]] = []
        for slot in self.slots:
            for agent_idx in slot.state.active_indices():
                rows.append((slot.index, agent_idx))
        if not rows:
            raise ContractError("no active agents anywhere in the pool")
        b = len(rows)
        obs = np.stack([self.slots[e].runtimes[a].current_obs for e, a in rows])
        hist = np.zeros((b, cfg.history_len, cfg.d))
        hist_mask = np.zeros((b, cfg.history_len))
        mems = np.zeros((b, cfg.memory_tokens, cfg.d))
        pool_sizes = []
        for slot in self.slots:
            active = slot.state.active_indices()
            pool_sizes.append(len(active) * cfg.memory_tokens)
        pmax = max(pool_sizes)
        pools = np.zeros((b, pmax, cfg.d))
        pool_mask = np.zeros((b, pmax))
        env_pools: dict[int, np.ndarray] = {}
        for slot in self.slots:
            active = slot.state.active_indices()
            if active:
                env_pools[slot.index] = np.concatenate(
                    [slot.runtimes[a].memory for a in active], axis=0)
        for i, (e, a) in enumerate(rows):
            runtime = self.slots[e].runtimes[a]
            filled = len(runtime.emb_history)
            if filled:
                hist[i, :filled] = np.stack(runtime.emb_history)
                hist_mask[i, :filled] = 1.0
            mems[i] = runtime.memory
            entries = env_pools[e]
            pools[i, :entries.shape[0]] = entries
            pool_mask[i, :entries.shape[0]] = 1.0

        emb = self.policy.encode(obs)
        logits, values, next_mem = self.policy.core_forward(
            emb, nk.Tensor(hist), hist_mask, nk.Tensor(mems),
            nk.Tensor(pools), pool_mask)
        return rows, {
            "obs": obs, "emb": emb.data, "logits": logits.data, "values": values.data,
            "next_memory": next_mem.data, "pools": pools, "pool_mask": pool_mask,
        }

    @staticmethod
    def _log_softmax(logits: np.ndarray) -> np.ndarray:
        shifted = logits - logits.max(axis=-1, keepdims=True)
        return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def _sample_actions(self, rows, logits) -> np.ndarray:
        probs = np.exp(self._log_softmax(logits))
        actions = np.zeros(len(rows), dtype=np.int64)
        for i, (e, _) in enumerate(rows):
            u = self.slots[e].action_rng.random()
            actions[i] = int(np.searchsorted(np.cumsum(probs[i]), u, side="right"))
        return np.minimum(actions, logits.shape[1] - 1)

    # -- collection ----------------------------------------------------------

    def collect(self, steps_target: int) -> RolloutBatch:
        """Gather at least ``steps_target`` transitions (one overshoot round at most)."""
        cfg = self.cfg
        pieces: list[TrajectoryPiece] = []
        episode_stats: list[EpisodeStats] = []
        collected = 0
        reward_sum = 0.0

        while collected < steps_target:
            rows, out = self._forward_rows()
            actions = self._sample_actions(rows, out["logits"])
            logp_all = self._log_softmax(out["logits"])

            # Record the pre-step snapshot on each agent's open trajectory.
            for i, (e, a) in enumerate(rows):
                slot = self.slots[e]
                runtime = slot.runtimes[a]
                if runtime.open is None:
                    runtime.open = _OpenTrajectory(runtime.raw_obs,
                                                   runtime.episode_step)
                traj = runtime.open
                traj.obs.append(out["obs"][i])
                traj.actions.append(int(actions[i]))
                traj.logits.append(out["logits"][i].copy())
                traj.logp.append(float(logp_all[i, actions[i]]))
                traj.values.append(float(out["values"][i]))
                valid = int(out["pool_mask"][i].sum())
                traj.pools.append(out["pools"][i, :valid].copy())
                traj.memory.append(runtime.memory.copy())

            # Step each environment with its slice of the joint action.
            cursor = 0
            for slot in self.slots:
                active = slot.state.active_indices()
                n = len(active)
                env_actions = [Action(int(a)) for a in actions[cursor:cursor + n]]
                row_indices = list(range(cursor, cursor + n))
                cursor += n
                state, observations, records, dones = step(slot.state, env_actions)
                ctx = self._reward_context(state.grid)
                obs_map = dict(zip(state.active_indices(), observations))
                for local, rec in enumerate(records):
                    i = row_indices[local]
                    runtime = slot.runtimes[rec.agent_index]
                    reward = compute_reward(self.reward_scheme, rec, ctx)
                    reward_sum += reward
                    agent_done = dones["agents"][rec.agent_index] or dones["episode"]
                    traj = runtime.open
                    traj.rewards.append(reward)
                    traj.dones.append(1.0 if agent_done else 0.0)
                    runtime.push_history(out["obs"][i], out["emb"][i])
                    runtime.memory = out["next_memory"][i].copy()
                    runtime.episode_step += 1
                    collected += 1
                    if agent_done:
                        pieces.append(traj.close(0.0, slot.index, rec.agent_index))
                        runtime.open = None
                        if not slot.state.agents[rec.agent_index].active:
                            del slot.runtimes[rec.agent_index]
                    else:
                        runtime.current_obs = obs_map[rec.agent_index]
                if dones["episode"]:
                    episode_stats.append(_episode_stats(state))
                    self._start_episode(slot)

        # Iteration boundary: bootstrap and close whatever is still open.
        open_rows = [(slot.index, a) for slot in self.slots
                     for a, rt in slot.runtimes.items() if rt.open is not None]
        if open_rows:
            _, out = self._forward_rows()
            row_index = {(e, a): i for i, (e, a) in
                         enumerate((s.index, a) for s in self.slots
                                   for a in s.state.active_indices())}
            for e, a in open_rows:
                runtime = self.slots[e].runtimes[a]
                bootstrap = float(out["values"][row_index[(e, a)]])
                pieces.append(runtime.open.close(bootstrap, e, a))
                runtime.open = None

        return RolloutBatch(pieces=pieces, episode_stats=episode_stats,
                            transitions=collected,
                            mean_reward=reward_sum / max(collected, 1))

    # -- snapshot / restore ---------------------------------------------------

    def snapshot(self) -> dict:
        slots = []
        for slot in self.slots:
            slots.append({
                "episode_index": slot.episode_index,
                "state": slot.state.snapshot(),
                "action_rng": slot.action_rng.bit_generator.state,
                "runtimes": {
                    str(a): {
                        "memory": rt.memory.tolist(),
                        "raw_obs": [o.tolist() for o in rt.raw_obs],
                        "episode_step": rt.episode_step,
                    } for a, rt in slot.runtimes.items()
                },
            })
        return {"slots": slots}

    def restore(self, doc: dict) -> None:
        cfg = self.cfg
        for slot, rec in zip(self.slots, doc["slots"]):
            slot.episode_index = rec["episode_index"]
            slot.state = EnvState.from_snapshot(rec["state"])
            slot.action_rng = np.random.default_rng(0)
            slot.action_rng.bit_generator.state = rec["action_rng"]
            slot.runtimes = {}
            for key, rt_doc in rec["runtimes"].items():
                agent_idx = int(key)
                runtime = _AgentRuntime(cfg.policy.history_len)
                runtime.memory = np.array(rt_doc["memory"])
                runtime.raw_obs = [np.array(o) for o in rt_doc["raw_obs"]]
                if runtime.raw_obs:
                    emb = self.policy.encode(np.stack(runtime.raw_obs)).data
                    runtime.emb_history = [emb[i] for i in range(emb.shape[0])]
                runtime.episode_step = rt_doc["episode_step"]
                runtime.current_obs = observe(slot.state, agent_idx)
                slot.runtimes[agent_idx] = runtime


def _episode_stats(state: EnvState) -> EpisodeStats:
    n = len(state.agents)
    arrivals = [a.arrival_step for a in state.agents if a.arrival_step is not None]
    if state.mode == "classical":
        soc = sum(a.arrival_step if a.arrival_step is not None else state.episode_length
                  for a in state.agents)
        return EpisodeStats(csr=1.0 if len(arrivals) == n else 0.0,
                            isr=len(arrivals) / n, soc=float(soc), throughput=0.0,
                            length=state.step_count, mode=state.mode)
    return EpisodeStats(csr=0.0, isr=0.0, soc=0.0,
                        throughput=state.goals_reached / max(state.step_count, 1),
                        length=state.step_count, mode=state.mode)


def build_training_maps(cfg: ExperimentConfig) -> list:
    """Materialize the map list a training run samples episodes from."""
    src = cfg.map_source
    rng = _rng(cfg.seed, 777)
    if src.kind == "bottleneck":
        lengths = rng.integers(src.min_len, src.max_len + 1, size=src.count)
        out = []
        for i, length in enumerate(lengths):
            from ..maps import BottleneckSpec
            spec = BottleneckSpec(int(length), src.room_size)
            out.append(gen_bottleneck(spec, seed=int(rng.integers(1 << 30)),
                                      fixed_placement=src.fixed_placement))
        return out
    if src.kind == "random":
        return [gen_random(src.width, src.height, src.density,
                           seed=int(rng.integers(1 << 30))) for _ in range(src.count)]
    if src.kind == "maze":
        return [gen_maze(src.width, src.height, seed=int(rng.integers(1 << 30)))
                for _ in range(src.count)]
    if src.kind == "files":
        import json as _json
        out = []
        for path in src.paths:
            with open(path, "r", encoding="utf-8") as fh:
                out.append(grid_from_json_dict(_json.load(fh)))
        return out
    raise ContractError(f"unhandled map source {src.kind!r}")
