"""Single-file parameter checkpoints.

Layout: one JSON header line (names, shapes, precision, optional extra
metadata), a newline, then the raw little-endian float payloads concatenated
in header order.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ContractError
from .tensor import Tensor

_WIRE = {"float64": "<f8", "float32": "<f4"}


def save_arrays(path, arrays: dict[str, np.ndarray], precision: str = "float64",
                extra: dict | None = None) -> None:
    if precision not in _WIRE:
        raise ContractError(f"unsupported checkpoint precision {precision!r}")
    header = {
        "precision": precision,
        "tensors": [{"name": name, "shape": list(arr.shape)} for name, arr in arrays.items()],
    }
    if extra is not None:
        header["extra"] = extra
    wire = np.dtype(_WIRE[precision])
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8"))
        fh.write(b"\n")
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype=wire).tobytes())


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint back as (arrays, extra-metadata)."""
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    wire = np.dtype(_WIRE[header["precision"]])
    arrays: dict[str, np.ndarray] = {}
    offset = nl + 1
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype=wire, count=count, offset=offset).reshape(shape)
        arrays[entry["name"]] = arr.astype(np.float64 if header["precision"] == "float64" else np.float32)
        offset += count * wire.itemsize
    return arrays, header.get("extra", {})


def save_params(path, params: dict[str, Tensor], precision: str = "float64",
                extra: dict | None = None) -> None:
    save_arrays(path, {name: p.data for name, p in params.items()}, precision, extra)


def load_params(path) -> tuple[dict[str, Tensor], dict]:
    arrays, extra = load_arrays(path)
    return {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}, extra
