"""Actor-critic policy: spatial encoder, memory-transformer cores, heads.

The shared-memory core builds a token sequence [memory, history, current],
runs pre-norm self-attention over it, then cross-attends every position to
the pool of all agents' memory vectors. Pool entries carry no positional
encoding; before attention they are put into a canonical byte order so the
arithmetic (and therefore the output) is literally identical under any
permutation of the other agents' entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .. import numkit as nk
from ..errors import ConfigError, ContractError, DimensionError

CORE_KINDS = ("srmt", "rmt", "attention", "empty", "rnn")


@dataclass
class PolicyConfig:
    core: str = "srmt"
    obs_size: int = 5
    obs_channels: int = 3
    filters: int = 8
    res_blocks: int = 1
    mlp_hidden: int = 16
    d: int = 16
    heads: int = 4
    blocks: int = 1
    history_len: int = 8
    memory_tokens: int = 1
    num_actions: int = 5

    def __post_init__(self):
        if self.core not in CORE_KINDS:
            raise ConfigError(f"unknown core {self.core!r}; expected one of {CORE_KINDS}")
        if self.d % self.heads != 0:
            raise ConfigError(f"attention hidden size {self.d} not divisible by {self.heads} heads")
        if self.memory_tokens < 1:
            raise ConfigError("memory_tokens must be >= 1")

    @property
    def seq_len(self) -> int:
        return self.memory_tokens + self.history_len + 1

    @property
    def flat_size(self) -> int:
        return self.filters * self.obs_size * self.obs_size

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "core", "obs_size", "obs_channels", "filters", "res_blocks", "mlp_hidden",
            "d", "heads", "blocks", "history_len", "memory_tokens", "num_actions")}


@dataclass
class PolicyOutput:
    """Per-agent result of one forward step."""

    logits: np.ndarray
    value: float
    next_memory: np.ndarray


def _ortho(rng, rows, cols):
    return nk.orthogonal_init(rows, cols, rng)


def _zeros(*shape):
    return nk.parameter(np.zeros(shape))


def _ones(*shape):
    return nk.parameter(np.ones(shape))


def init_params(cfg: PolicyConfig, seed: int) -> dict[str, nk.Tensor]:
    """Orthogonal matrices, zero biases, unit layer-norm gains."""
    rng = np.random.default_rng(seed)
    p: dict[str, nk.Tensor] = {}

    def conv(name, cout, cin):
        w = _ortho(rng, cout, cin * 9)
        p[f"{name}.w"] = nk.parameter(w.data.reshape(cout, cin, 3, 3))
        p[f"{name}.b"] = _zeros(cout)

    def dense(name, din, dout):
        p[f"{name}.w"] = _ortho(rng, din, dout)
        p[f"{name}.b"] = _zeros(dout)

    def lnorm(name):
        p[f"{name}.g"] = _ones(cfg.d)
        p[f"{name}.b"] = _zeros(cfg.d)

    conv("enc.conv0", cfg.filters, cfg.obs_channels)
    for i in range(cfg.res_blocks):
        conv(f"enc.res{i}.conv1", cfg.filters, cfg.filters)
        conv(f"enc.res{i}.conv2", cfg.filters, cfg.filters)
    dense("enc.fc1", cfg.flat_size, cfg.mlp_hidden)
    dense("enc.fc2", cfg.mlp_hidden, cfg.d)

    if cfg.core in ("srmt", "rmt", "attention"):
        p["pos"] = _ortho(rng, cfg.seq_len, cfg.d)
        for i in range(cfg.blocks):
            lnorm(f"block{i}.ln1")
            for proj in ("wq", "wk", "wv", "wo"):
                dense(f"block{i}.attn.{proj}", cfg.d, cfg.d)
            lnorm(f"block{i}.ln2")
            dense(f"block{i}.mlp.fc1", cfg.d, cfg.mlp_hidden)
            dense(f"block{i}.mlp.fc2", cfg.mlp_hidden, cfg.d)
            if cfg.core == "srmt":
                lnorm(f"block{i}.lnx")
                for proj in ("wq", "wk", "wv", "wo"):
                    dense(f"block{i}.xattn.{proj}", cfg.d, cfg.d)
                lnorm(f"block{i}.ln3")
                dense(f"block{i}.xmlp.fc1", cfg.d, cfg.mlp_hidden)
                dense(f"block{i}.xmlp.fc2", cfg.mlp_hidden, cfg.d)
    if cfg.core in ("srmt", "rmt"):
        dense("mem_init", cfg.d, cfg.memory_tokens * cfg.d)
        dense("mem_head", cfg.d, cfg.d)
    if cfg.core == "rnn":
        for gate in ("z", "r", "n"):
            dense(f"gru.w{gate}", cfg.d, cfg.d)
            p[f"gru.u{gate}"] = _ortho(rng, cfg.d, cfg.d)
        dense("mem_init", cfg.d, cfg.d)

    dense("action_head", cfg.d, cfg.num_actions)
    dense("value_head", cfg.d, 1)
    return p


class Policy:
    """A parameter set plus the forward passes, shared by every agent."""

    def __init__(self, cfg: PolicyConfig, params: dict[str, nk.Tensor]):
        self.cfg = cfg
        self.params = params

    @classmethod
    def init(cls, cfg: PolicyConfig, seed: int) -> "Policy":
        return cls(cfg, init_params(cfg, seed))

    # -- encoder ---------------------------------------------------------

    def encode(self, obs) -> nk.Tensor:
        """Observations (B, C, m, m) to embeddings (B, d)."""
        cfg = self.cfg
        x = obs if isinstance(obs, nk.Tensor) else nk.Tensor(np.asarray(obs))
        if x.ndim != 4 or x.shape[1:] != (cfg.obs_channels, cfg.obs_size, cfg.obs_size):
            raise DimensionError(
                f"expected (B, {cfg.obs_channels}, {cfg.obs_size}, {cfg.obs_size}), got {x.shape}")
        p = self.params
        h = nk.relu(self._conv(x, "enc.conv0"))
        for i in range(cfg.res_blocks):
            r = nk.relu(self._conv(h, f"enc.res{i}.conv1"))
            r = self._conv(r, f"enc.res{i}.conv2")
            h = nk.relu(nk.add(h, r))
        flat = nk.reshape(h, (x.shape[0], cfg.flat_size))
        hidden = nk.relu(self._dense(flat, "enc.fc1"))
        return self._dense(hidden, "enc.fc2")

    def _conv(self, x, name):
        p = self.params
        out = nk.conv2d(x, p[f"{name}.w"])
        bias = nk.reshape(p[f"{name}.b"], (1, out.shape[1], 1, 1))
        return nk.add(out, bias)

    def _dense(self, x, name):
        p = self.params
        return nk.add(nk.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])

    # -- memory ----------------------------------------------------------

    def init_memory(self, first_embedding: nk.Tensor) -> nk.Tensor:
        """Initial memory from the first observation embedding, (B, k, d)."""
        cfg = self.cfg
        b = first_embedding.shape[0]
        if cfg.core in ("srmt", "rmt", "rnn"):
            out = self._dense(first_embedding, "mem_init")
            return nk.reshape(out, (b, cfg.memory_tokens if cfg.core != "rnn" else 1, cfg.d))
        return nk.Tensor(np.zeros((b, 1, cfg.d)))

    # -- attention machinery ----------------------------------------------

    def _mha(self, prefix: str, q_in: nk.Tensor, kv_in: nk.Tensor,
             key_mask: np.ndarray | None) -> nk.Tensor:
        cfg = self.cfg
        b, tq = q_in.shape[0], q_in.shape[1]
        tk = kv_in.shape[1]
        heads, dh = cfg.heads, cfg.d // cfg.heads

        def split(t, tlen):
            t = nk.reshape(t, (b, tlen, heads, dh))
            return nk.transpose(t, (0, 2, 1, 3))

        q = split(self._dense(q_in, f"{prefix}.wq"), tq)
        k = split(self._dense(kv_in, f"{prefix}.wk"), tk)
        v = split(self._dense(kv_in, f"{prefix}.wv"), tk)
        scores = nk.mul(nk.matmul(q, nk.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
        if key_mask is not None:
            bias = np.where(key_mask[:, None, None, :] > 0, 0.0, -1e9)
            scores = nk.add(scores, nk.Tensor(bias))
        mixed = nk.matmul(nk.softmax(scores), v)
        merged = nk.reshape(nk.transpose(mixed, (0, 2, 1, 3)), (b, tq, cfg.d))
        return self._dense(merged, f"{prefix}.wo")

    def _ln(self, x, name):
        p = self.params
        return nk.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])

    def _mlp(self, x, name):
        return self._dense(nk.relu(self._dense(x, f"{name}.fc1")), f"{name}.fc2")

    def _self_block(self, i: int, x: nk.Tensor, seq_mask: np.ndarray) -> nk.Tensor:
        normed = self._ln(x, f"block{i}.ln1")
        x = nk.add(x, self._mha(f"block{i}.attn", normed, normed, seq_mask))
        return nk.add(x, self._mlp(self._ln(x, f"block{i}.ln2"), f"block{i}.mlp"))

    def _cross_block(self, i: int, x: nk.Tensor, pool: nk.Tensor,
                     pool_mask: np.ndarray) -> nk.Tensor:
        normed = self._ln(x, f"block{i}.lnx")
        x = nk.add(x, self._mha(f"block{i}.xattn", normed, pool, pool_mask))
        return nk.add(x, self._mlp(self._ln(x, f"block{i}.ln3"), f"block{i}.xmlp"))

    # -- cores -------------------------------------------------------------

    def core_forward(self, emb: nk.Tensor, history: nk.Tensor, hist_mask: np.ndarray,
                     memory: nk.Tensor, pool: nk.Tensor, pool_mask: np.ndarray
                     ) -> tuple[nk.Tensor, nk.Tensor, nk.Tensor]:
        """One policy step for a batch of agents.

        ``emb`` (B, d) current embeddings; ``history`` (B, H, d) with
        ``hist_mask`` (B, H) marking filled slots; ``memory`` (B, k, d);
        ``pool`` (B, P, d) with ``pool_mask`` (B, P). Returns (logits (B, 5),
        value (B,), next_memory (B, k, d)). Non-memory cores ignore the
        memory inputs; non-shared cores ignore the pool.
        """
        cfg = self.cfg
        kind = cfg.core
        b = emb.shape[0]
        if kind == "empty":
            return self._heads(emb, b)
        if kind == "rnn":
            return self._gru_step(emb, memory, b)

        k = cfg.memory_tokens
        cur = nk.reshape(emb, (b, 1, cfg.d))
        if kind == "attention":
            tokens = nk.concat([history, cur], axis=1)
            pos = nk.narrow(self.params["pos"], 0, k, cfg.history_len + 1)
            seq_mask = np.concatenate([hist_mask, np.ones((b, 1))], axis=1)
        else:
            tokens = nk.concat([memory, history, cur], axis=1)
            pos = self.params["pos"]
            seq_mask = np.concatenate([np.ones((b, k)), hist_mask, np.ones((b, 1))], axis=1)
        x = nk.add(tokens, pos)

        if kind == "srmt":
            if pool is None or pool.shape[1] == 0:
                raise ContractError("shared-memory core needs a non-empty pool")
            pool, pool_mask = _canonical_pool(pool, pool_mask)
        for i in range(cfg.blocks):
            x = self._self_block(i, x, seq_mask)
            if kind == "srmt":
                x = self._cross_block(i, x, pool, pool_mask)

        cur_out = nk.reshape(nk.narrow(x, 1, x.shape[1] - 1, 1), (b, cfg.d))
        logits, value, _ = self._heads(cur_out, b)
        if kind == "attention":
            next_memory = nk.Tensor(np.zeros((b, k, cfg.d)))
        else:
            mem_out = nk.narrow(x, 1, 0, k)
            next_memory = nk.tanh(nk.add(nk.matmul(mem_out, self.params["mem_head.w"]),
                                         self.params["mem_head.b"]))
        return logits, value, next_memory

    def _heads(self, feat: nk.Tensor, b: int):
        logits = self._dense(feat, "action_head")
        value = nk.reshape(self._dense(feat, "value_head"), (b,))
        return logits, value, nk.Tensor(np.zeros((b, 1, self.cfg.d)))

    def _gru_step(self, emb: nk.Tensor, memory: nk.Tensor, b: int):
        cfg = self.cfg
        p = self.params
        h = nk.reshape(memory, (b, cfg.d))
        z = nk.sigmoid(nk.add(self._dense(emb, "gru.wz"), nk.matmul(h, p["gru.uz"])))
        r = nk.sigmoid(nk.add(self._dense(emb, "gru.wr"), nk.matmul(h, p["gru.ur"])))
        n = nk.tanh(nk.add(self._dense(emb, "gru.wn"), nk.matmul(nk.mul(r, h), p["gru.un"])))
        one_minus_z = nk.sub(1.0, z)
        h_new = nk.add(nk.mul(one_minus_z, n), nk.mul(z, h))
        logits, value, _ = self._heads(h_new, b)
        return logits, value, nk.reshape(h_new, (b, 1, cfg.d))


def _canonical_pool(pool: nk.Tensor, pool_mask: np.ndarray
                    ) -> tuple[nk.Tensor, np.ndarray]:
    """Reorder pool entries into a canonical byte order, valid entries first.

    Attention is mathematically permutation-invariant over pool entries, but
    float summation is not order-independent; fixing a canonical order makes
    the invariance hold bitwise.
    """
    b, p, d = pool.shape
    order = np.empty((b, p), dtype=np.intp)
    for row in range(b):
        valid = [i for i in range(p) if pool_mask[row, i] > 0]
        invalid = [i for i in range(p) if pool_mask[row, i] <= 0]
        valid.sort(key=lambda i: pool.data[row, i].tobytes())
        order[row] = valid + invalid
    if np.array_equal(order, np.arange(p)[None, :].repeat(b, axis=0)):
        sorted_mask = pool_mask
        return pool, sorted_mask
    flat_idx = (np.arange(b)[:, None] * p + order).ravel()
    flat = nk.reshape(pool, (b * p, d))
    pool_sorted = nk.reshape(nk.gather_rows(flat, flat_idx), (b, p, d))
    mask_sorted = np.take_along_axis(pool_mask, order, axis=1)
    return pool_sorted, mask_sorted


def joint_step(policy: Policy, observations: list[np.ndarray],
               histories: list[np.ndarray], memories: np.ndarray,
               active_next: list[bool] | None = None
               ) -> tuple[list[PolicyOutput], np.ndarray]:
    """Evaluate every agent of one environment against the same pool.

    ``memories`` is the (n, k, d) collection of all agents' current memory
    vectors; it doubles as the shared pool every agent reads (simultaneous
    read). Returns per-agent outputs and the next pool, which keeps only the
    rows where ``active_next`` is true (defaults to all).
    """
    cfg = policy.cfg
    n = len(observations)
    if n == 0:
        raise ContractError("joint_step needs at least one agent")
    emb = policy.encode(np.stack(observations))
    hist = np.zeros((n, cfg.history_len, cfg.d))
    hist_mask = np.zeros((n, cfg.history_len))
    for i, h in enumerate(histories):
        filled = min(len(h), cfg.history_len)
        if filled:
            hist[i, :filled] = h[-filled:]
            hist_mask[i, :filled] = 1.0
    # Pool rows are every agent's memory tokens, broadcast to all agents.
    entries = memories.reshape(n * cfg.memory_tokens, cfg.d)
    pool = nk.Tensor(np.repeat(entries[None, :, :], n, axis=0))
    pool_mask = np.ones((n, entries.shape[0]))
    logits, value, next_mem = policy.core_forward(
        emb, nk.Tensor(hist), hist_mask, nk.Tensor(memories), pool, pool_mask)
    outputs = [PolicyOutput(logits=logits.data[i].copy(), value=float(value.data[i]),
                            next_memory=next_mem.data[i].copy()) for i in range(n)]
    keep = active_next if active_next is not None else [True] * n
    pool_next = next_mem.data[np.asarray(keep, dtype=bool)]
    return outputs, pool_next
