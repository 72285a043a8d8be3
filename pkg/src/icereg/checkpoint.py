"""ICTK binary tensor checkpoints.

Layout (all integers little-endian):
  magic "ICTK" | u32 format version | u32 tensor count |
  per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims... |
              float32 LE values, row-major.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import ContractError

MAGIC = b"ICTK"
FORMAT_VERSION = 1


def write_tensors(path, tensors: dict[str, np.ndarray]):
    """Write named arrays in insertion order (stable round trips)."""
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr, dtype="<f4", order="C")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            f.write(arr.tobytes())


def read_tensors(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise ContractError(f"{path}: not an ICTK checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != FORMAT_VERSION:
        raise ContractError(f"{path}: unsupported ICTK version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            (rank,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dims = struct.unpack_from(f"<{rank}Q", raw, pos)
            pos += 8 * rank
            n = int(np.prod(dims)) if rank else 1
            if pos + 4 * n > len(raw):
                raise ContractError(f"{path}: ICTK tensor data truncated")
            values = np.frombuffer(raw, dtype="<f4", count=n, offset=pos)
            pos += 4 * n
            out[name] = values.reshape(dims).astype(np.float32)
    except struct.error as exc:
        raise ContractError(f"{path}: ICTK record truncated: {exc}") from exc
    if pos != len(raw):
        raise ContractError(f"{path}: trailing bytes in ICTK checkpoint")
    return out
