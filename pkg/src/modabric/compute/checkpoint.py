"""Binary parameter container.

Layout (all integers little-endian)::

    magic     4 bytes   b"MDBP"
    version   uint32    1
    endian    1 byte    b"<"
    count     uint32    number of parameter records
    record*   name_len uint32, name UTF-8, rank uint32,
              extents uint64 * rank, values float64 * prod(extents)

Values are written as little-endian float64 regardless of the in-memory
dtype, so float64 stores round-trip bit-exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import ValidationError

MAGIC = b"MDBP"
VERSION = 1


def save_params(path, params) -> None:
    """Write a mapping name -> array (or a ParameterStore) to ``path``."""
    mapping = params.params if hasattr(params, "params") else params
    chunks = [MAGIC, struct.pack("<I", VERSION), b"<", struct.pack("<I", len(mapping))]
    for name, value in mapping.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype="<f8", order="C")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_params(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ValidationError(f"{path}: not a parameter checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    if data[8:9] != b"<":
        raise ValidationError(f"{path}: unsupported endianness tag {data[8:9]!r}")
    (count,) = struct.unpack_from("<I", data, 9)
    pos = 13
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, pos)
        pos += 4
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", data, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", data, pos)
        pos += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * n
    if pos != len(data):
        raise ValidationError(f"{path}: {len(data) - pos} trailing bytes")
    return out
