"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"FSCK"  u32 version  u32 meta_len  meta (UTF-8 JSON)  u32 count
    count x [ u32 name_len  name  u8 dtype_tag  u32 rank  rank x u32 extent  payload ]

``dtype_tag`` 1 means 64-bit little-endian IEEE floats, the only tag written.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .data import FormatError
from .models import Module, build_model

MAGIC = b"FSCK"
VERSION = 1
F64 = 1


def dumps(model: Module, extra: dict | None = None) -> bytes:
    meta = {"kind": model.kind, "config": model.config(), **(extra or {})}
    meta_b = json.dumps(meta, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC + struct.pack("<II", VERSION, len(meta_b)) + meta_b)
    buf.write(struct.pack("<I", len(model.params)))
    for name, p in model.params.items():
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)) + nb + struct.pack("<BI", F64, p.data.ndim))
        buf.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        buf.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    return buf.getvalue()


def save(path, model: Module, extra: dict | None = None) -> None:
    Path(path).write_bytes(dumps(model, extra))


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint: need {n} bytes", self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self, count: int = 1):
        vals = struct.unpack(f"<{count}I", self.take(4 * count))
        return vals[0] if count == 1 else vals


def loads(raw: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    r = _Reader(raw)
    if r.take(4) != MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    meta = json.loads(r.take(r.u32()).decode())
    state = {}
    for _ in range(r.u32()):
        name = r.take(r.u32()).decode()
        at = r.pos
        tag = r.take(1)[0]
        if tag != F64:
            raise FormatError(f"unknown dtype tag {tag}", at)
        rank = r.u32()
        shape = tuple(np.atleast_1d(r.u32(rank))) if rank else ()
        n = int(np.prod(shape, dtype=np.int64))
        state[name] = np.frombuffer(r.take(8 * n), dtype="<f8").astype(np.float64).reshape(shape)
    if r.pos != len(raw):
        raise FormatError("trailing bytes after checkpoint", r.pos)
    return meta, state


def load(path, seed: int = 0) -> tuple[Module, dict]:
    meta, state = loads(Path(path).read_bytes())
    model = build_model(meta["kind"], meta["config"], seed=seed)
    model.load_state_dict(state)
    return model, meta
