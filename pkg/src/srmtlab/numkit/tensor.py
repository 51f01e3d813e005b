"""Dense tensors with reverse-mode automatic differentiation.

The module keeps a stack of active :class:`Tape` objects. Operations executed
while a tape is active record themselves on it; :func:`backward` replays the
records in reverse to populate ``.grad`` on every reachable leaf. Outside a
tape, operations run plain numpy with no recording, which is the fast path
used during rollouts.

Tapes are single-use: one ``backward`` consumes the tape.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError, DimensionError, NumericError

_DEFAULT_DTYPE = np.float64
_CHECK_FINITE = True


def set_default_dtype(name: str) -> None:
    """Select the working precision, ``"float64"`` or ``"float32"``."""
    global _DEFAULT_DTYPE
    if name not in ("float64", "float32"):
        raise ContractError(f"unsupported dtype {name!r}")
    _DEFAULT_DTYPE = np.float64 if name == "float64" else np.float32


def default_dtype():
    return _DEFAULT_DTYPE


def set_check_finite(enabled: bool) -> None:
    """Toggle the NaN/Inf guard applied after every kernel."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    """A dense array plus autodiff metadata.

    ``data`` is held as a row-major numpy array in the working precision.
    Tensors are treated as immutable values; ops return fresh tensors.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=_DEFAULT_DTYPE)
        if _CHECK_FINITE and not np.isfinite(arr).all():
            raise NumericError("tensor constructed with non-finite entries")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, requires_grad={self.requires_grad})"

    # Operator sugar; all routing goes through the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def grad_or_zeros(t: Tensor) -> np.ndarray:
    """Gradient of a leaf, with unreachable leaves reading as zero."""
    return t.grad if t.grad is not None else np.zeros_like(t.data)


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of executed operations for one backward pass."""

    def __init__(self):
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], object]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._entries)

    def _record(self, out: Tensor, inputs: tuple[Tensor, ...], backward_fn) -> None:
        self._entries.append((out, inputs, backward_fn))


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(tape: Tape, loss: Tensor) -> list[Tensor]:
    """Populate ``.grad`` on every requires_grad leaf reachable from ``loss``.

    Returns the leaves that received a gradient. Leaves not reachable from
    the loss are untouched (``grad_or_zeros`` reads them as zero). The tape is
    consumed and cannot be replayed.
    """
    if loss.size != 1:
        raise ContractError("backward requires a scalar loss")
    if tape._consumed:
        raise ContractError("tape already consumed by a previous backward")
    tape._consumed = True

    adjoints: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    holders: dict[int, Tensor] = {id(loss): loss}
    for out, inputs, backward_fn in reversed(tape._entries):
        g = adjoints.pop(id(out), None)
        holders.pop(id(out), None)
        if g is None:
            continue
        for inp, gi in zip(inputs, backward_fn(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in adjoints:
                adjoints[key] = adjoints[key] + gi
            else:
                adjoints[key] = gi
                holders[key] = inp
    leaves = []
    for key, g in adjoints.items():
        leaf = holders[key]
        if not leaf.requires_grad:
            continue
        leaf.grad = g if leaf.grad is None else leaf.grad + g
        leaves.append(leaf)
    return leaves


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_DEFAULT_DTYPE))


def _result(data: np.ndarray) -> Tensor:
    out = Tensor.__new__(Tensor)
    arr = np.ascontiguousarray(data, dtype=_DEFAULT_DTYPE)
    if _CHECK_FINITE and not np.isfinite(arr).all():
        raise NumericError("kernel produced non-finite entries")
    out.data = arr
    out.requires_grad = False
    out.grad = None
    return out


def _emit(data, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = _result(data)
    if any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape = _active_tape()
        if tape is not None:
            tape._record(out, inputs, backward_fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` over the axes broadcasting expanded."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(data, (a, b), bwd)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,))


def sub(a, b) -> Tensor:
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    data = a.data * b.data
    ad, bd = a.data, b.data

    def bwd(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return _emit(data, (a, b), bwd)


def matmul(a, b) -> Tensor:
    """Matrix product.

    Supports plain 2-D by 2-D, batched N-D by N-D with identical leading
    dimensions, and N-D by 2-D (shared right operand, the dense-layer case).
    No broadcasting beyond that.
    """
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must have at least 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} @ {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul batch dimensions disagree: {a.shape} @ {b.shape}")
    data = np.matmul(a.data, b.data)
    ad, bd = a.data, b.data

    def bwd(g):
        da = np.matmul(g, np.swapaxes(bd, -1, -2))
        if bd.ndim == 2 and ad.ndim > 2:
            k = ad.shape[-1]
            c = g.shape[-1]
            db = np.matmul(ad.reshape(-1, k).T, g.reshape(-1, c))
        else:
            db = np.matmul(np.swapaxes(ad, -1, -2), g)
        return da, db

    return _emit(data, (a, b), bwd)


def conv2d(x, kernels) -> Tensor:
    """Same-padded stride-1 cross-correlation with 3x3 kernels.

    ``x`` is (C_in, H, W) or batched (N, C_in, H, W); ``kernels`` is
    (C_out, C_in, 3, 3). Output spatial size equals the input's.
    """
    x, kernels = _as_tensor(x), _as_tensor(kernels)
    squeeze = x.ndim == 3
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 4:
        raise DimensionError(f"conv2d input must be 3-D or 4-D, got shape {x.shape}")
    kd = kernels.data
    if kd.ndim != 4 or kd.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d kernels must be (C_out, C_in, 3, 3), got {kernels.shape}")
    n, cin, h, w = xd.shape
    cout = kd.shape[0]
    if kd.shape[1] != cin:
        raise DimensionError(f"conv2d channel mismatch: input {cin}, kernels expect {kd.shape[1]}")

    xp = np.pad(xd, ((0, 0), (0, 0), (1, 1), (1, 1)))
    # (N, C, H, W, 3, 3) windows over the padded input.
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * h * w, cin * 9)
    w2 = kd.reshape(cout, cin * 9).T
    out = (cols @ w2).reshape(n, h, w, cout).transpose(0, 3, 1, 2)

    def bwd(g):
        gd = g[None] if squeeze else g
        g2 = gd.transpose(0, 2, 3, 1).reshape(n * h * w, cout)
        dk = (g2.T @ cols).reshape(cout, cin, 3, 3)
        dcols = (g2 @ w2.T).reshape(n, h, w, cin, 3, 3)
        dxp = np.zeros_like(xp)
        for di in range(3):
            for dj in range(3):
                dxp[:, :, di:di + h, dj:dj + w] += dcols[:, :, :, :, di, dj].transpose(0, 3, 1, 2)
        dx = dxp[:, :, 1:h + 1, 1:w + 1]
        return dx[0] if squeeze else dx, dk

    return _emit(out[0] if squeeze else out, (x, kernels), bwd)


def relu(x) -> Tensor:
    x = _as_tensor(x)
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)
    return _emit(out, (x,), lambda g: (g * (1.0 - out * out),))


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-np.clip(x.data, -60.0, 60.0)))
    return _emit(out, (x,), lambda g: (g * out * (1.0 - out),))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)  # overflow surfaces as NumericError via the finite guard
    return _emit(out, (x,), lambda g: (g * out,))


def softmax(x) -> Tensor:
    """Row-stochastic softmax over the last axis, stabilized by max shift."""
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bwd(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True)) * out,)

    return _emit(out, (x,), bwd)


def log_softmax(x) -> Tensor:
    x = _as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    out = shifted - lse
    sm = np.exp(out)

    def bwd(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _emit(out, (x,), bwd)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean, unit variance, then affine."""
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.shape[-1]
    if d < 2:
        raise DimensionError("layer_norm needs a last axis of size >= 2")
    if gain.shape != (d,) or bias.shape != (d,):
        raise DimensionError("layer_norm gain/bias must match the last axis")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = xhat * gain.data + bias.data
    gd = gain.data

    def bwd(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gd
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return _emit(out, (x, gain, bias), bwd)


def tsum(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    data = x.data.sum(axis=axis)
    shape = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _emit(data, (x,), bwd)


def tmean(x, axis=None) -> Tensor:
    x = _as_tensor(x)
    count = x.size if axis is None else x.shape[axis]
    data = x.data.mean(axis=axis)
    shape = x.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape) / count,)

    return _emit(data, (x,), bwd)


def reshape(x, shape) -> Tensor:
    x = _as_tensor(x)
    orig = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes) -> Tensor:
    x = _as_tensor(x)
    inverse = tuple(np.argsort(axes))
    return _emit(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(data, tuple(tensors), bwd)


def narrow(x, axis: int, start: int, length: int) -> Tensor:
    x = _as_tensor(x)
    index = [slice(None)] * x.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        dx[index] = g
        return (dx,)

    return _emit(x.data[index], (x,), bwd)


def gather_rows(x, idx) -> Tensor:
    """Select rows of a 2-D tensor; adjoint scatter-adds back."""
    x = _as_tensor(x)
    if x.ndim != 2:
        raise DimensionError("gather_rows expects a 2-D tensor")
    idx = np.asarray(idx, dtype=np.intp)
    shape = x.shape

    def bwd(g):
        dx = np.zeros(shape, dtype=g.dtype)
        np.add.at(dx, idx, g)
        return (dx,)

    return _emit(x.data[idx], (x,), bwd)


def minimum(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    take_a = a.data <= b.data  # ties route the gradient to the first operand

    def bwd(g):
        return _unbroadcast(g * take_a, a.shape), _unbroadcast(g * ~take_a, b.shape)

    return _emit(np.where(take_a, a.data, b.data), (a, b), bwd)


def clip(x, lo: float, hi: float) -> Tensor:
    x = _as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _emit(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))
