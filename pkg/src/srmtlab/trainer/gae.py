"""Generalized advantage estimation."""

from __future__ import annotations

import numpy as np

from ..errors import DimensionError


def compute_gae(rewards, values, dones, gamma: float, lam: float,
                bootstrap_value: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Advantages and returns from aligned per-step arrays.

    delta_t = r_t + gamma * V_{t+1} * (1 - done_t) - V_t
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}

    ``bootstrap_value`` stands in for V_{T} when the tail is not terminal.
    Returns are advantages plus values.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    if not (rewards.shape == values.shape == dones.shape) or rewards.ndim != 1:
        raise DimensionError(
            f"misaligned GAE inputs: {rewards.shape}, {values.shape}, {dones.shape}")
    t_len = rewards.shape[0]
    advantages = np.zeros(t_len)
    last = 0.0
    for t in range(t_len - 1, -1, -1):
        nonterminal = 1.0 - dones[t]
        next_value = values[t + 1] if t + 1 < t_len else bootstrap_value
        delta = rewards[t] + gamma * next_value * nonterminal - values[t]
        last = delta + gamma * lam * nonterminal * last
        advantages[t] = last
    return advantages, advantages + values
