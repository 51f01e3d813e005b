"""Adam optimizer and orthogonal parameter initialization."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor, default_dtype


@dataclass
class AdamState:
    """Per-parameter moment accumulators keyed by parameter name."""

    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
              state: AdamState, lr: float) -> tuple[dict[str, Tensor], AdamState]:
    """One bias-corrected Adam update.

    Returns a fresh parameter dict (tensors are immutable values); ``state``
    is advanced in place and returned for convenience. Parameters without an
    entry in ``grads`` are carried over untouched.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    new_params: dict[str, Tensor] = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            new_params[name] = p
            continue
        if g.shape != p.data.shape:
            raise DimensionError(f"gradient shape {g.shape} does not match parameter {name} {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * (g * g)
        m_hat = state.m[name] / (1.0 - b1 ** t)
        v_hat = state.v[name] / (1.0 - b2 ** t)
        new_params[name] = Tensor(p.data - lr * m_hat / (np.sqrt(v_hat) + state.eps),
                                  requires_grad=True)
    return new_params, state


def orthogonal_init(rows: int, cols: int, seed, gain: float = 1.0) -> Tensor:
    """Semi-orthogonal matrix, deterministic per seed.

    For rows <= cols the rows are orthonormal (W @ W.T = I); otherwise the
    columns are. ``seed`` may be an int or a numpy Generator.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flat = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(flat)
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity of QR
    w = q if rows >= cols else q.T
    return Tensor(np.ascontiguousarray(gain * w, dtype=default_dtype()), requires_grad=True)
