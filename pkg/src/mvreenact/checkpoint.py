"""Named-tensor checkpoint archive.

Layout (all integers little-endian): magic ``MVHC``, u32 format version,
u32 tensor count, then per tensor sorted by name: u32 name length, UTF-8
name, u32 rank, u64 dims, raw float32 payload; the file ends with a u64
FNV-1a checksum over every preceding byte.  Values are stored as float32
even though compute is float64; the quantization is below test tolerances.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import Tensor

MAGIC = b"MVHC"
VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK = 0xFFFFFFFFFFFFFFFF


class CheckpointError(Exception):
    pass


def fnv1a(data: bytes, h: int = _FNV_OFFSET) -> int:
    for b in data:
        h = ((h ^ b) * _FNV_PRIME) & _MASK
    return h


def save_checkpoint(params: dict, path) -> None:
    """Write named tensors (Tensor or ndarray values), sorted by name."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(params))]
    for name in sorted(params):
        value = params[name]
        arr = np.asarray(value.data if isinstance(value, Tensor) else value,
                         dtype=np.float32)
        nb = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(nb)))
        chunks.append(nb)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes())
    blob = b"".join(chunks)
    blob += struct.pack("<Q", fnv1a(blob))
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_bytes(blob)


def load_checkpoint(path) -> dict[str, np.ndarray]:
    """Read a checkpoint back as float64 arrays; verifies the checksum."""
    blob = Path(path).read_bytes()
    if len(blob) < 20:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, tail = blob[:-8], blob[-8:]
    (stored,) = struct.unpack("<Q", tail)
    if fnv1a(body) != stored:
        raise CheckpointError(f"{path}: checksum mismatch, refusing to load")
    if body[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {body[:4]!r}")
    version, count = struct.unpack_from("<II", body, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported format version {version}")
    off = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}Q", body, off)
        off += 8 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(body, dtype="<f4", count=n, offset=off)
        off += 4 * n
        out[name] = arr.reshape(dims).astype(np.float64)
    if off != len(body):
        raise CheckpointError(f"{path}: {len(body) - off} trailing bytes")
    return out


def params_to_tensors(raw: dict[str, np.ndarray]) -> dict[str, Tensor]:
    return {k: Tensor(v, requires_grad=True) for k, v in raw.items()}
