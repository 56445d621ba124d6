"""Binary checkpoint / tensor-record format.

Layout (all integers little-endian)::

    b"CSLID1"
    u64 snapshot length, UTF-8 JSON snapshot
    repeated until EOF:
        u32 name length, UTF-8 name
        u32 rank, rank x u64 dims
        prod(dims) x float32 values (row-major)
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from .netcore import Params

MAGIC = b"CSLID1"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    params: Params
    epoch: int = -1
    dev_error: Optional[float] = None
    optimizer: Dict[str, Any] = field(default_factory=dict)  # "step", "m", "v"
    extra: Dict[str, Any] = field(default_factory=dict)

    def snapshot(self) -> Dict[str, Any]:
        return {
            "format_version": FORMAT_VERSION,
            "config": self.config,
            "epoch": self.epoch,
            "dev_error": self.dev_error,
            "adam_step": self.optimizer.get("step"),
            "extra": self.extra,
        }


def write_records(path: Union[str, Path], snapshot: Dict[str, Any], tensors: Dict[str, np.ndarray]):
    meta = json.dumps(snapshot, sort_keys=True).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(meta)))
        f.write(meta)
        for name, value in tensors.items():
            arr = np.ascontiguousarray(value, dtype="<f4")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())
    tmp.replace(path)


def read_records(path: Union[str, Path]):
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read {path}: {e}") from None
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a CSLID1 file")
    pos = len(MAGIC)

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise CheckpointError(f"{path}: truncated record")
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    (meta_len,) = struct.unpack("<Q", take(8))
    snapshot = json.loads(take(meta_len).decode("utf-8"))
    tensors: Dict[str, np.ndarray] = {}
    while pos < len(data):
        (name_len,) = struct.unpack("<I", take(4))
        name = take(name_len).decode("utf-8")
        (rank,) = struct.unpack("<I", take(4))
        dims = struct.unpack(f"<{rank}Q", take(8 * rank))
        count = int(np.prod(dims)) if rank else 1
        tensors[name] = np.frombuffer(take(4 * count), dtype="<f4").reshape(dims).astype(np.float32)
    return snapshot, tensors


_M, _V = "adam.m/", "adam.v/"


def save_checkpoint(path: Union[str, Path], ck: Checkpoint) -> None:
    tensors: Dict[str, np.ndarray] = dict(ck.params)
    for key, prefix in (("m", _M), ("v", _V)):
        for name, value in ck.optimizer.get(key, {}).items():
            tensors[prefix + name] = value
    write_records(path, ck.snapshot(), tensors)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    snapshot, tensors = read_records(path)
    version = snapshot.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    params = Params()
    m, v = Params(), Params()
    for name, value in tensors.items():
        if name.startswith(_M):
            m[name[len(_M):]] = value
        elif name.startswith(_V):
            v[name[len(_V):]] = value
        else:
            params[name] = value
    optimizer = {}
    if snapshot.get("adam_step") is not None:
        optimizer = {"step": snapshot["adam_step"], "m": m, "v": v}
    return Checkpoint(
        config=snapshot["config"],
        params=params,
        epoch=snapshot.get("epoch", -1),
        dev_error=snapshot.get("dev_error"),
        optimizer=optimizer,
        extra=snapshot.get("extra", {}),
    )


def save_features(path: Union[str, Path], feats: np.ndarray, meta: Optional[Dict[str, Any]] = None):
    write_records(path, {"format_version": FORMAT_VERSION, "kind": "features", **(meta or {})},
                  {"features": feats})


def load_features(path: Union[str, Path]) -> np.ndarray:
    _, tensors = read_records(path)
    if "features" not in tensors:
        raise CheckpointError(f"{path}: no 'features' tensor")
    return tensors["features"].astype(np.float64)
