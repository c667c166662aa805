"""Single-file weights archive with a JSON config header.

Layout: magic "TCW1", u32 header length, UTF-8 JSON header, then the
raw little-endian tensor payload. The header records the config dict
and a manifest of (name, shape, dtype, offset) entries, so a checkpoint
is self-describing and its bytes are deterministic, which makes weight
hashes usable as freeze invariants.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

__all__ = [
    "CheckpointError",
    "save_checkpoint",
    "load_checkpoint",
    "checkpoint_bytes",
    "state_hash",
]

_MAGIC = b"TCW1"

_DTYPES = {
    "float32": np.float32,
    "float64": np.float64,
    "int64": np.int64,
    "int32": np.int32,
    "uint8": np.uint8,
}


class CheckpointError(ValueError):
    pass


def checkpoint_bytes(state_dict: dict[str, torch.Tensor], config: dict | None = None) -> bytes:
    """Serialize a state dict (and optional config) to the archive bytes."""
    entries = []
    payload = bytearray()
    for name in sorted(state_dict):
        arr = state_dict[name].detach().cpu().numpy()
        dtype = str(arr.dtype)
        if dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {dtype} for tensor {name}")
        entries.append(
            {
                "name": name,
                "shape": list(arr.shape),
                "dtype": dtype,
                "offset": len(payload),
            }
        )
        payload.extend(np.ascontiguousarray(arr).tobytes())
    header = json.dumps(
        {"config": config or {}, "tensors": entries}, sort_keys=True
    ).encode("utf-8")
    return _MAGIC + struct.pack("<I", len(header)) + header + bytes(payload)


def save_checkpoint(
    path: str | Path, model_or_state: nn.Module | dict, config: dict | None = None
) -> None:
    state = (
        model_or_state.state_dict()
        if isinstance(model_or_state, nn.Module)
        else model_or_state
    )
    Path(path).write_bytes(checkpoint_bytes(state, config))


def load_checkpoint(path: str | Path) -> tuple[dict[str, torch.Tensor], dict]:
    """Read an archive back into (state_dict, config)."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CheckpointError(f"not a weights archive: {path}")
    (header_len,) = struct.unpack_from("<I", data, 4)
    try:
        header = json.loads(data[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt header in {path}: {exc}") from exc
    payload = data[8 + header_len :]
    state = {}
    for entry in header["tensors"]:
        dtype = _DTYPES[entry["dtype"]]
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * dtype().itemsize
        if end > len(payload):
            raise CheckpointError(f"truncated payload for tensor {entry['name']} in {path}")
        arr = np.frombuffer(payload[start:end], dtype=dtype).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.copy())
    return state, header["config"]


def state_hash(model_or_state: nn.Module | dict) -> str:
    """Deterministic digest of all weights; constant iff they are
    bit-identical."""
    state = (
        model_or_state.state_dict()
        if isinstance(model_or_state, nn.Module)
        else model_or_state
    )
    return hashlib.sha256(checkpoint_bytes(state)).hexdigest()
