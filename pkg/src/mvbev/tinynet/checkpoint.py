"""MVP1 parameter checkpoints (little-endian, float32 payloads)."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import CorruptDataset

MAGIC = b"MVP1"


def dumps(params: dict) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(params))]
    for name, arr in params.items():
        nb = name.encode("utf-8")
        a = np.ascontiguousarray(arr, dtype="<f4")
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}I", *a.shape))
        parts.append(a.tobytes())
    return b"".join(parts)


def loads(raw: bytes, source: str = "<bytes>") -> dict:
    if raw[:4] != MAGIC:
        raise CorruptDataset(f"{source}: not an MVP1 checkpoint")
    try:
        (count,) = struct.unpack_from("<I", raw, 4)
        off = 8
        params = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<B", raw, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(raw):
                raise CorruptDataset(f"{source}: truncated tensor {name!r}")
            params[name] = np.frombuffer(raw, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
            off += 4 * size
    except struct.error as e:
        raise CorruptDataset(f"{source}: {e}") from e
    if off != len(raw):
        raise CorruptDataset(f"{source}: {len(raw) - off} trailing bytes")
    return params


def save_params(path, params: dict) -> None:
    Path(path).write_bytes(dumps(params))


def load_params(path) -> dict:
    return loads(Path(path).read_bytes(), str(path))
