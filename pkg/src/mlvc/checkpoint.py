"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MLVC" | u32 version | u32 header length | header (UTF-8 JSON)
    | payload: float32 tensors concatenated in header order
    | u64 checksum of the payload (first 8 bytes of BLAKE2b, read little-endian)

The header holds ``{"spec": <model spec>, "tensors": [{"name", "shape", "dtype"}]}``.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from pathlib import Path

import numpy as np

from mlvc.models import build_model, normalize_spec, spec_of
from mlvc.nn import Module

MAGIC = b"MLVC"
VERSION = 1
_F32 = np.dtype("<f4")


class CheckpointError(ValueError):
    """Corrupt or unreadable checkpoint."""


class SpecMismatchError(ValueError):
    """Checkpoint tensors do not fit the requested model spec."""


def checksum(payload: bytes) -> int:
    return int.from_bytes(hashlib.blake2b(payload, digest_size=8).digest(), "little")


def encode(state, spec: dict) -> bytes:
    tensors, chunks = [], []
    for name, arr in state.items():
        arr = np.asarray(arr)
        tensors.append({"name": name, "shape": list(arr.shape), "dtype": "f32"})
        chunks.append(np.ascontiguousarray(arr, dtype=_F32).tobytes())
    header = json.dumps({"spec": spec, "tensors": tensors}, sort_keys=True).encode("utf-8")
    payload = b"".join(chunks)
    return (MAGIC + struct.pack("<II", VERSION, len(header)) + header + payload
            + struct.pack("<Q", checksum(payload)))


def decode(buf: bytes):
    """Parse and verify a checkpoint; returns ``(spec, ordered state dict)``."""
    if len(buf) < 12 or buf[:4] != MAGIC:
        raise CheckpointError("not an MLVC checkpoint (bad magic)")
    version, header_len = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    start = 12 + header_len
    if len(buf) < start:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(buf[12:start].decode("utf-8"))
        tensors = header["tensors"]
        spec = header["spec"]
    except (ValueError, KeyError) as exc:
        raise CheckpointError("malformed checkpoint header") from exc
    sizes = [int(np.prod(t["shape"], dtype=np.int64)) * 4 for t in tensors]
    if any(t.get("dtype") != "f32" for t in tensors):
        raise CheckpointError("only f32 tensors are supported")
    end = start + sum(sizes)
    if len(buf) != end + 8:
        raise CheckpointError(f"checkpoint length {len(buf)} does not match header (expected {end + 8})")
    payload = buf[start:end]
    (stored,) = struct.unpack_from("<Q", buf, end)
    if stored != checksum(payload):
        raise CheckpointError("checkpoint checksum mismatch")
    state, offset = {}, 0
    for t, size in zip(tensors, sizes):
        arr = np.frombuffer(payload, dtype=_F32, count=size // 4, offset=offset)
        state[t["name"]] = arr.reshape(t["shape"]).astype(np.float32)
        offset += size
    return spec, state


def save_checkpoint(path, model: Module, state=None) -> None:
    """Write ``model`` (or an explicit ``state`` for it) atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = encode(state if state is not None else model.state_dict(), spec_of(model))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def load_checkpoint(path, spec: dict | None = None) -> Module:
    """Rebuild a model from a checkpoint, optionally forcing a model spec.

    With an explicit ``spec`` every expected tensor must exist with the
    expected shape; the error names the first offending tensor.
    """
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise FileNotFoundError(f"cannot read checkpoint {path}: {exc.strerror or exc}") from exc
    stored_spec, state = decode(buf)
    target = normalize_spec(spec if spec is not None else stored_spec)
    model = build_model(target)
    expected = model.state_dict()
    for name, arr in expected.items():
        if name not in state:
            raise SpecMismatchError(f"checkpoint lacks tensor {name!r} required by the model spec")
        if tuple(state[name].shape) != arr.shape:
            raise SpecMismatchError(
                f"tensor {name!r}: checkpoint shape {tuple(state[name].shape)} vs spec shape {arr.shape}")
    extra = [k for k in state if k not in expected]
    if extra:
        raise SpecMismatchError(f"checkpoint tensor {extra[0]!r} is not part of the model spec")
    model.load_state_dict(state)
    return model
