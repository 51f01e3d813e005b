"""PPO update with truncated backpropagation through the memory recurrence.

Trajectory pieces are chunked into segments of at most ``recurrence_rollout``
steps. Each segment is re-forwarded from its stored memory snapshot so
gradients flow through the recurrence inside the segment; the shared-pool
entries seen during rollout enter the re-forward as constants (no gradient
crosses agents through the pool), and observation embeddings, including the
history context, are recomputed under the current parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .. import numkit as nk
from ..config import PPOConfig
from ..errors import TrainAbort
from ..policy.network import Policy
from .rollout import RolloutBatch, TrajectoryPiece


@dataclass
class Segment:
    piece: TrajectoryPiece
    start: int  # offset of the segment within the piece
    length: int
    obs_base: int = 0  # row offset of the piece's obs in the batch obs matrix


@dataclass
class UpdateStats:
    loss: float
    policy_loss: float
    value_loss: float
    entropy: float
    kl: float
    clip_fraction: float
    grad_norm: float
    advantage_mean: float
    advantage_std: float


def chunk_segments(pieces: list[TrajectoryPiece], rollout_len: int) -> list[Segment]:
    """Length-``rollout_len`` chunks; segments never cross piece boundaries."""
    segments = []
    for piece in pieces:
        for start in range(0, piece.length, rollout_len):
            segments.append(Segment(piece=piece, start=start,
                                    length=min(rollout_len, piece.length - start)))
    return segments


def ppo_update(batch: RolloutBatch, policy: Policy, adam: nk.AdamState,
               cfg: PPOConfig, lr: float, diagnostics_path=None) -> tuple[Policy, UpdateStats]:
    """One PPO pass (``cfg.epochs`` epochs) over the batch.

    Returns the updated policy (fresh parameter tensors) and loss statistics
    from the final epoch. Advantages are normalized per batch.
    """
    adv_list, ret_list = batch.advantages_and_returns(cfg.gamma, cfg.gae_lambda)
    flat_adv = np.concatenate(adv_list)
    adv_mean, adv_std = float(flat_adv.mean()), float(flat_adv.std())
    scale = adv_std if adv_std > 1e-8 else 1.0
    norm_adv = [(a - adv_mean) / scale for a in adv_list]

    stats = None
    for _ in range(cfg.epochs):
        policy, stats = _one_epoch(batch, norm_adv, ret_list, policy, adam, cfg, lr,
                                   diagnostics_path)
    stats.advantage_mean = adv_mean
    stats.advantage_std = adv_std
    return policy, stats


def _one_epoch(batch, norm_adv, ret_list, policy: Policy, adam, cfg: PPOConfig,
               lr: float, diagnostics_path) -> tuple[Policy, UpdateStats]:
    pcfg = policy.cfg
    hist_len = pcfg.history_len
    segments = chunk_segments(batch.pieces, cfg.recurrence_rollout)
    segments.sort(key=lambda s: -s.length)  # rows alive at offset j form a prefix

    piece_offsets: dict[int, int] = {}
    cursor = 0
    obs_blocks = []
    for piece in batch.pieces:
        piece_offsets[id(piece)] = cursor
        obs_blocks.append(piece.obs)
        cursor += piece.obs.shape[0]
    all_obs = np.concatenate(obs_blocks, axis=0)
    for seg in segments:
        seg.obs_base = piece_offsets[id(seg.piece)]

    piece_adv = {id(p): a for p, a in zip(batch.pieces, norm_adv)}
    piece_ret = {id(p): r for p, r in zip(batch.pieces, ret_list)}

    max_len = segments[0].length if segments else 0
    alive_counts = [sum(1 for s in segments if s.length > j) for j in range(max_len)]
    pool_width = max(p.shape[0] for piece in batch.pieces for p in piece.pools)

    with nk.Tape() as tape:
        emb_all = policy.encode(all_obs)

        mem0 = np.stack([seg.piece.memory_before[seg.start] for seg in segments])
        mem_prev = nk.Tensor(mem0)
        logp_parts, value_parts, entropy_parts, logits_data = [], [], [], []
        adv_flat, ret_flat, oldlogp_flat, oldlogits_flat, actions_flat = [], [], [], [], []

        for j in range(max_len):
            n_j = alive_counts[j]
            live = segments[:n_j]
            cur_idx = np.array([s.obs_base + s.piece.context_len + s.start + j for s in live])
            hist_idx = np.zeros((n_j, hist_len), dtype=np.intp)
            hist_mask = np.zeros((n_j, hist_len))
            for i, s in enumerate(live):
                t = s.start + j  # piece-local step
                episode_pos = s.piece.episode_start_offset + t
                filled = min(hist_len, s.piece.context_len + t, episode_pos)
                base = s.obs_base + s.piece.context_len + t
                for kslot in range(filled):
                    hist_idx[i, kslot] = base - filled + kslot
                hist_mask[i, :filled] = 1.0

            cur = nk.gather_rows(emb_all, cur_idx)
            hist = nk.reshape(nk.gather_rows(emb_all, hist_idx.reshape(-1)),
                              (n_j, hist_len, pcfg.d))
            pools = np.zeros((n_j, pool_width, pcfg.d))
            pool_mask = np.zeros((n_j, pool_width))
            for i, s in enumerate(live):
                entries = s.piece.pools[s.start + j]
                pools[i, :entries.shape[0]] = entries
                pool_mask[i, :entries.shape[0]] = 1.0

            mem_j = mem_prev if mem_prev.shape[0] == n_j else nk.narrow(mem_prev, 0, 0, n_j)
            logits, value, mem_next = policy.core_forward(
                cur, hist, hist_mask, mem_j, nk.Tensor(pools), pool_mask)
            mem_prev = mem_next

            actions = np.array([s.piece.actions[s.start + j] for s in live])
            onehot = np.zeros((n_j, pcfg.num_actions))
            onehot[np.arange(n_j), actions] = 1.0
            logp_rows = nk.log_softmax(logits)
            logp_taken = nk.tsum(nk.mul(logp_rows, nk.Tensor(onehot)), axis=1)
            entropy_rows = nk.neg(nk.tsum(nk.mul(nk.softmax(logits), logp_rows), axis=1))

            logp_parts.append(logp_taken)
            value_parts.append(value)
            entropy_parts.append(entropy_rows)
            logits_data.append(logits.data)
            adv_flat.append([piece_adv[id(s.piece)][s.start + j] for s in live])
            ret_flat.append([piece_ret[id(s.piece)][s.start + j] for s in live])
            oldlogp_flat.append([s.piece.behavior_logp[s.start + j] for s in live])
            oldlogits_flat.append([s.piece.behavior_logits[s.start + j] for s in live])
            actions_flat.append(actions)

        new_logp = nk.concat(logp_parts, axis=0)
        values = nk.concat(value_parts, axis=0)
        entropies = nk.concat(entropy_parts, axis=0)
        advantages = nk.Tensor(np.concatenate([np.asarray(a) for a in adv_flat]))
        returns = nk.Tensor(np.concatenate([np.asarray(r) for r in ret_flat]))
        old_logp = nk.Tensor(np.concatenate([np.asarray(v) for v in oldlogp_flat]))

        ratio = nk.exp(nk.sub(new_logp, old_logp))
        clipped = nk.clip(ratio, 1.0 - cfg.clip_ratio, 1.0 + cfg.clip_ratio)
        surrogate = nk.minimum(nk.mul(ratio, advantages), nk.mul(clipped, advantages))
        policy_loss = nk.neg(nk.tmean(surrogate))
        diff = nk.sub(values, returns)
        value_loss = nk.tmean(nk.mul(diff, diff))
        entropy_mean = nk.tmean(entropies)
        loss = nk.add(nk.sub(policy_loss, nk.mul(entropy_mean, cfg.entropy_coef)),
                      nk.mul(value_loss, cfg.value_loss_coef))

    loss_value = loss.item()
    if not np.isfinite(loss_value):
        _dump_diagnostics(diagnostics_path, policy, batch,
                          {"policy_loss": policy_loss.item(),
                           "value_loss": value_loss.item(),
                           "entropy": entropy_mean.item()})
        raise TrainAbort("non-finite PPO loss; diagnostics dumped")

    nk.backward(tape, loss)
    grads = {name: nk.grad_or_zeros(p) for name, p in policy.params.items()}
    grad_norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if cfg.grad_clip is not None and grad_norm > cfg.grad_clip > 0:
        factor = cfg.grad_clip / grad_norm
        grads = {name: g * factor for name, g in grads.items()}
    new_params, _ = nk.adam_step(policy.params, grads, adam, lr)

    new_logits = np.concatenate(logits_data, axis=0)
    old_logits = np.concatenate([np.asarray(x) for x in oldlogits_flat], axis=0)
    kl = _categorical_kl(old_logits, new_logits)
    ratio_data = ratio.data
    clip_fraction = float(np.mean(np.abs(ratio_data - 1.0) > cfg.clip_ratio))

    stats = UpdateStats(loss=loss_value, policy_loss=policy_loss.item(),
                        value_loss=value_loss.item(), entropy=entropy_mean.item(),
                        kl=kl, clip_fraction=clip_fraction, grad_norm=grad_norm,
                        advantage_mean=0.0, advantage_std=0.0)
    return Policy(policy.cfg, new_params), stats


def _categorical_kl(old_logits: np.ndarray, new_logits: np.ndarray) -> float:
    def logsm(x):
        s = x - x.max(axis=-1, keepdims=True)
        return s - np.log(np.exp(s).sum(axis=-1, keepdims=True))

    lp_old, lp_new = logsm(old_logits), logsm(new_logits)
    return float((np.exp(lp_old) * (lp_old - lp_new)).sum(axis=-1).mean())


def adaptive_kl_lr(measured_kl: float, lr: float, target: float = 0.008,
                   factor: float = 1.5, lr_min: float = 1e-6, lr_max: float = 1e-2) -> float:
    """Shrink the step on big policy jumps, grow it on timid ones."""
    if measured_kl > 2.0 * target:
        lr = lr / factor
    elif measured_kl < target / 2.0:
        lr = lr * factor
    return float(min(max(lr, lr_min), lr_max))


def _dump_diagnostics(path, policy: Policy, batch: RolloutBatch, losses: dict) -> None:
    if path is None:
        return
    doc = {
        "losses": losses,
        "transitions": batch.transitions,
        "param_norms": {name: float(np.abs(p.data).max())
                        for name, p in policy.params.items()},
        "reward_mean": batch.mean_reward,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
