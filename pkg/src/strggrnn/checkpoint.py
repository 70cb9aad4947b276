"""Flat binary checkpoints: a versioned header, JSON metadata and named float64 blocks.

Layout (little endian)::

    b"STRGGRNN" | u32 version | u32 meta length | meta JSON (utf-8, sorted keys)
    u32 block count
    per block: u16 name length | name | u8 ndim | u32 * ndim shape | float64 data

Blocks are written in sorted name order, so equal models give equal bytes.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError, UsageError

MAGIC = b"STRGGRNN"
VERSION = 1
META_KEYS = ("variant", "pred_len", "seed", "policy", "decode", "h_O_init", "handoff", "nmf_max_iters",
             "nmf_tol", "unit", "trained")


def encode(params: dict[str, np.ndarray], meta: dict) -> bytes:
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes, struct.pack("<I", len(params))]
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        raw = name.encode()
        out.append(struct.pack("<HB", len(raw), arr.ndim) + raw)
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes, source: str):
        self.data, self.pos, self.source = data, 0, source

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.source}: truncated checkpoint at byte {self.pos}")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(data: bytes, source: str = "<checkpoint>") -> tuple[dict[str, np.ndarray], dict]:
    r = _Reader(data, source)
    if r.take(len(MAGIC)) != MAGIC:
        raise FormatError(f"{source}: not a checkpoint (bad magic)")
    version, meta_len = r.unpack("<II")
    if version != VERSION:
        raise FormatError(f"{source}: checkpoint version {version}, expected {VERSION}")
    try:
        meta = json.loads(r.take(meta_len).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{source}: corrupt metadata ({exc})") from None
    (count,) = r.unpack("<I")
    params = {}
    for _ in range(count):
        name_len, ndim = r.unpack("<HB")
        name = r.take(name_len).decode()
        shape = r.unpack(f"<{ndim}I")
        size = int(np.prod(shape)) if shape else 1
        params[name] = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(data):
        raise FormatError(f"{source}: {len(data) - r.pos} trailing bytes")
    return params, meta


def model_meta(model) -> dict:
    return {
        "variant": model.variant.value, "pred_len": model.pred_len, "seed": model.seed,
        "policy": model.policy.value, "decode": model.decode, "h_O_init": model.h_O_init, "handoff": model.handoff,
        "nmf_max_iters": model.nmf_max_iters, "nmf_tol": model.nmf_tol, "unit": model.unit,
        "trained": model.trained,
    }


def save(model, path, extra: dict | None = None) -> Path:
    path = Path(path)
    meta = model_meta(model)
    if extra:
        meta["extra"] = extra
    path.write_bytes(encode(model.params(), meta))
    return path


def load(path):
    """Rebuild a :class:`~strggrnn.model.Model` from ``path``; returns ``(model, meta)``."""
    from .model import Model

    path = Path(path)
    params, meta = decode(path.read_bytes(), str(path))
    missing = [k for k in META_KEYS if k not in meta]
    if missing:
        raise FormatError(f"{path}: metadata lacks {', '.join(missing)}")
    try:
        model = Model(**{k: meta[k] for k in META_KEYS})
    except UsageError as exc:
        raise FormatError(f"{path}: {exc}") from None
    expected = model.params()
    if set(expected) != set(params):
        raise FormatError(f"{path}: parameter blocks do not match variant {meta['variant']}")
    for name, value in params.items():
        if value.shape != expected[name].shape:
            raise FormatError(f"{path}: block {name} has shape {value.shape}, expected {expected[name].shape}")
    model.load_params(params)
    return model, meta
