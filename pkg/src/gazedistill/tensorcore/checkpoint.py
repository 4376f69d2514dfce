"""Checkpoint container: magic "GDCK", little-endian, float32 payloads.

Layout: magic (4 bytes), format version (u32), then repeated records of
(name length u32, UTF-8 name, rank u32, dims u32 x rank, f32 payload).
Optimizer state lives under a "/opt/" name prefix, bundle metadata under
"/meta/"; both use the same record scheme.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"GDCK"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionError(CheckpointError):
    pass


class TruncatedError(CheckpointError):
    pass


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write name -> array records in dict order."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", data.ndim))
            f.write(struct.pack(f"<{data.ndim}I", *data.shape))
            f.write(data.tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    buf = f.read(n)
    if len(buf) != n:
        raise TruncatedError(f"checkpoint truncated while reading {what}")
    return buf


def load_arrays(path: str | Path) -> dict[str, np.ndarray]:
    """Read all records back as float32 arrays, preserving order."""
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise BadMagicError(f"bad checkpoint magic {magic!r}, expected {MAGIC!r}")
        ver = struct.unpack("<I", _read_exact(f, 4, "version"))[0]
        if ver != VERSION:
            raise VersionError(f"unsupported checkpoint version {ver}, expected {VERSION}")
        while True:
            head = f.read(4)
            if not head:
                break
            if len(head) != 4:
                raise TruncatedError("checkpoint truncated while reading name length")
            (nlen,) = struct.unpack("<I", head)
            name = _read_exact(f, nlen, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(f, 4, "rank"))
            dims = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank, "dims")) if rank else ()
            count = int(np.prod(dims)) if dims else 1
            payload = _read_exact(f, 4 * count, f"payload of '{name}'")
            out[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)
    return out
