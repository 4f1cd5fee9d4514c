"""Flat binary array files: JSON header + little-endian f32 payload.

Layout::

    b"ARTK" | u64 header length (LE) | header JSON (utf-8) | payload

The header lists ``{"name", "shape", "offset", "nbytes"}`` per array (offsets
relative to the payload start) plus a free-form ``meta`` object.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

MAGIC = b"ARTK"


def encode_arrays(arrays: Mapping[str, Any], meta: Mapping[str, Any] | None = None) -> bytes:
    entries = []
    chunks = []
    offset = 0
    for name, value in arrays.items():
        if isinstance(value, torch.Tensor):
            value = value.detach().cpu().numpy()
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f4"))
        raw = arr.tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    header = json.dumps({"arrays": entries, "meta": dict(meta or {})}, sort_keys=True).encode("utf-8")
    return MAGIC + struct.pack("<Q", len(header)) + header + b"".join(chunks)


def decode_arrays(blob: bytes) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    if blob[:4] != MAGIC:
        raise ValueError("not an array file (bad magic)")
    (hlen,) = struct.unpack("<Q", blob[4:12])
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        arr = np.frombuffer(blob[start:start + e["nbytes"]], dtype="<f4").reshape(e["shape"])
        arrays[e["name"]] = arr.astype(np.float32)
    return arrays, header.get("meta", {})


def write_atomic(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def save_arrays(path: str | Path, arrays: Mapping[str, Any], meta: Mapping[str, Any] | None = None) -> str:
    """Write the file atomically and return its sha256."""
    blob = encode_arrays(arrays, meta)
    write_atomic(path, blob)
    return hashlib.sha256(blob).hexdigest()


def load_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    return decode_arrays(Path(path).read_bytes())


def save_module(path: str | Path, module: torch.nn.Module, meta: Mapping[str, Any] | None = None) -> str:
    return save_arrays(path, module.state_dict(), meta)


def load_module(path: str | Path, module: torch.nn.Module) -> dict[str, Any]:
    arrays, meta = load_arrays(path)
    state = module.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise ValueError(f"checkpoint {path} lacks {sorted(missing)[:5]}")
    module.load_state_dict({k: torch.from_numpy(arrays[k].copy()).to(state[k].dtype) for k in state})
    return meta


def file_hash(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
