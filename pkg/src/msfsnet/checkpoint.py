"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"MSFS"  u32 version
    u32 meta_len, meta_len bytes of UTF-8 JSON (config snapshot, counters, RNG state)
    u32 entry_count
    per entry: u16 name_len, name, u8 dtype (0 = f32, 1 = f64), u8 ndim,
               ndim x u32 extents, raw little-endian values
"""

from __future__ import annotations

import io
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"MSFS"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    entries: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)


def _write(fh, ckpt: Checkpoint) -> None:
    fh.write(MAGIC)
    fh.write(struct.pack("<I", VERSION))
    meta = json.dumps(ckpt.meta, sort_keys=True).encode("utf-8")
    fh.write(struct.pack("<I", len(meta)))
    fh.write(meta)
    fh.write(struct.pack("<I", len(ckpt.entries)))
    for name, arr in ckpt.entries.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise FormatError(f"{name}: unsupported dtype {arr.dtype}")
        raw_name = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw_name)))
        fh.write(raw_name)
        fh.write(struct.pack("<BB", code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> Path:
    """Write atomically (temp file + rename)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        _write(fh, ckpt)
    os.replace(tmp, path)
    return path


class _Reader:
    def __init__(self, data: bytes):
        self.buf = io.BytesIO(data)

    def take(self, n: int) -> bytes:
        b = self.buf.read(n)
        if len(b) != n:
            raise FormatError("checkpoint is truncated")
        return b

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> Checkpoint:
    data = Path(path).read_bytes()
    r = _Reader(data)
    if r.take(4) != MAGIC:
        raise FormatError(f"{path}: bad magic bytes, not a checkpoint")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version} (expected {VERSION})")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata block") from exc
    (count,) = r.unpack("<I")
    entries = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8", errors="strict")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"{path}: entry {name!r} has unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}I")
        dt = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
        arr = np.frombuffer(r.take(nbytes), dtype=dt).reshape(shape)
        entries[name] = arr.astype(dt.newbyteorder("="), copy=True)
    if r.buf.read(1):
        raise FormatError(f"{path}: trailing bytes after last entry")
    return Checkpoint(entries, meta)
