"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"SCM1"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 n_entries
    per entry: u16 name_len  name  u8 dtype  u8 rank  u32 dims[rank]  raw values (row-major)

dtype codes: 0 = float32, 1 = float64. Adam moments are stored as sibling entries
``<name>.m`` / ``<name>.v``; the Adam step count lives in the metadata.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .optim import AdamState

MAGIC = b"SCM1"
VERSION = 1
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
DTYPE_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class CheckpointError(ValueError):
    pass


def config_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def write_arrays(path, arrays: dict[str, np.ndarray], meta: dict) -> None:
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr, order="C")  # ascontiguousarray would promote rank 0 to rank 1
        if arr.dtype not in DTYPE_CODES:
            raise CheckpointError(f"unsupported dtype {arr.dtype} for entry {name!r}")
        code = DTYPE_CODES[arr.dtype]
        name_bytes = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_bytes)) + name_bytes)
        parts.append(struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype(DTYPES[code], copy=False).tobytes())
    Path(path).write_bytes(b"".join(parts))


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("truncated checkpoint")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(Path(path).read_bytes())
    if r.take(4) != MAGIC:
        raise CheckpointError("bad magic")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        code, rank = r.unpack("<BB")
        if code not in DTYPES:
            raise CheckpointError(f"unknown dtype code {code} for entry {name!r}")
        shape = r.unpack(f"<{rank}I") if rank else ()
        dtype = DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        arrays[name] = np.frombuffer(r.take(n_bytes), dtype=dtype).reshape(shape).copy()
    if r.pos != len(r.data):
        raise CheckpointError("trailing bytes after last entry")
    return arrays, meta


def module_arrays(module: nn.Module, prefix: str = "") -> dict[str, np.ndarray]:
    """Parameters and floating-point buffers (batch-norm running stats) of ``module``."""
    out = {}
    for name, t in module.state_dict().items():
        if t.is_floating_point():
            out[prefix + name] = t.detach().cpu().numpy()
    return out


def save_checkpoint(path, module: nn.Module, adam: AdamState | None, meta: dict) -> None:
    arrays = module_arrays(module)
    meta = dict(meta)
    if adam is not None:
        meta["adam_t"] = adam.t
        for name, m in adam.m.items():
            arrays[name + ".m"] = m.detach().cpu().numpy()
            arrays[name + ".v"] = adam.v[name].detach().cpu().numpy()
    write_arrays(path, arrays, meta)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], AdamState, dict]:
    arrays, meta = read_arrays(path)
    adam = AdamState(t=int(meta.get("adam_t", 0)))
    weights = {}
    for name, arr in arrays.items():
        if name.endswith(".m") and name[:-2] in arrays:
            adam.m[name[:-2]] = torch.from_numpy(arr)
        elif name.endswith(".v") and name[:-2] in arrays:
            adam.v[name[:-2]] = torch.from_numpy(arr)
        else:
            weights[name] = arr
    return weights, adam, meta


def load_into(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str = "") -> list[str]:
    """Copy ``prefix``-ed arrays into ``module``; returns the names that were loaded."""
    state = module.state_dict()
    loaded = []
    with torch.no_grad():
        for name, t in state.items():
            key = prefix + name
            if key in arrays:
                src = torch.from_numpy(arrays[key])
                if src.shape != t.shape:
                    raise CheckpointError(f"shape mismatch for {key!r}: {tuple(src.shape)} vs {tuple(t.shape)}")
                t.copy_(src)
                loaded.append(key)
    return loaded
