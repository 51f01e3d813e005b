"""GAE against a brute-force discounted-sum oracle."""

import numpy as np
import pytest

from srmtlab.errors import DimensionError
from srmtlab.trainer import compute_gae


def brute_force_gae(rewards, values, dones, gamma, lam, bootstrap):
    """O(T^2) expansion: A_t = sum_k (gamma*lam)^k * delta_{t+k}, truncated at dones."""
    t_len = len(rewards)
    deltas = np.zeros(t_len)
    for t in range(t_len):
        next_v = values[t + 1] if t + 1 < t_len else bootstrap
        deltas[t] = rewards[t] + gamma * next_v * (1.0 - dones[t]) - values[t]
    adv = np.zeros(t_len)
    for t in range(t_len):
        acc = 0.0
        weight = 1.0
        for k in range(t, t_len):
            acc += weight * deltas[k]
            if dones[k]:
                break
            weight *= gamma * lam
        adv[t] = acc
    return adv


def test_single_terminal_step():
    adv, ret = compute_gae([2.0], [0.5], [1.0], gamma=0.9, lam=0.95)
    np.testing.assert_allclose(adv, [1.5])  # A = r - V
    np.testing.assert_allclose(ret, [2.0])


def test_lambda_zero_is_one_step_td():
    rng = np.random.default_rng(0)
    r, v = rng.standard_normal(10), rng.standard_normal(10)
    d = np.zeros(10)
    adv, _ = compute_gae(r, v, d, gamma=0.9, lam=0.0, bootstrap_value=0.3)
    expected = np.array([r[t] + 0.9 * (v[t + 1] if t < 9 else 0.3) - v[t] for t in range(10)])
    np.testing.assert_allclose(adv, expected, atol=1e-12)


@pytest.mark.parametrize("seed", range(100))
def test_matches_brute_force_on_random_sequences(seed):
    rng = np.random.default_rng(seed)
    t_len = 50
    rewards = rng.standard_normal(t_len)
    values = rng.standard_normal(t_len)
    dones = (rng.random(t_len) < 0.1).astype(float)
    bootstrap = float(rng.standard_normal())
    gamma = float(rng.uniform(0.9, 0.999))
    lam = float(rng.uniform(0.8, 1.0))
    adv, ret = compute_gae(rewards, values, dones, gamma, lam, bootstrap)
    expected = brute_force_gae(rewards, values, dones, gamma, lam, bootstrap)
    np.testing.assert_allclose(adv, expected, atol=1e-9)
    np.testing.assert_allclose(ret, expected + values, atol=1e-9)


def test_length_mismatch_rejected():
    with pytest.raises(DimensionError):
        compute_gae([1.0, 2.0], [0.0], [0.0, 0.0], gamma=0.9, lam=0.9)
