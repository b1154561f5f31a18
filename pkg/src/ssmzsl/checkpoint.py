"""Binary named-tensor checkpoints.

Layout, all integers little-endian::

    b"ZMBA"  u32 version  u32 record_count
    per record: u32 name_len, utf-8 name, u32 rank, rank x u32 extents,
                u8 precision (4 = float32, 8 = float64), raw little-endian payload
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"ZMBA"
VERSION = 1
_TAGS = {np.dtype(np.float32): 4, np.dtype(np.float64): 8}
_CODES = {4: "<f4", 8: "<f8"}


def dumps(state: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(state))]
    for name, arr in state.items():
        arr = np.asarray(arr)
        if arr.dtype not in _TAGS:
            raise TypeError(f"{name}: unsupported dtype {arr.dtype}")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(struct.pack("<B", _TAGS[arr.dtype]))
        parts.append(arr.astype(_CODES[_TAGS[arr.dtype]]).tobytes())
    return b"".join(parts)


def loads(blob: bytes) -> dict[str, np.ndarray]:
    if blob[:4] != MAGIC:
        raise ValueError("not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    pos = 12
    state = {}
    for _ in range(count):
        (n,) = struct.unpack_from("<I", blob, pos)
        pos += 4
        name = blob[pos:pos + n].decode("utf-8")
        pos += n
        (rank,) = struct.unpack_from("<I", blob, pos)
        shape = struct.unpack_from(f"<{rank}I", blob, pos + 4)
        pos += 4 + 4 * rank
        tag = blob[pos]
        pos += 1
        if tag not in _CODES:
            raise ValueError(f"{name}: unknown precision tag {tag}")
        count_bytes = int(np.prod(shape, dtype=np.int64)) * tag
        arr = np.frombuffer(blob[pos:pos + count_bytes], dtype=_CODES[tag])
        pos += count_bytes
        state[name] = arr.reshape(shape).astype(np.float32 if tag == 4 else np.float64)
    if pos != len(blob):
        raise ValueError(f"{len(blob) - pos} trailing bytes in checkpoint")
    return state


def save(path, state: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(state))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes())
