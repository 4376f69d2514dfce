"""Counter-based splittable random streams.

Every consumer of randomness in this package owns an `RngStream` identified
by (seed, stream id). Draws are pure functions of (seed, stream, counter),
so results never depend on draw interleaving across streams or on worker
count. Uniforms come from a SplitMix64 finalizer over the counter; normals
use Box-Muller.
"""

from __future__ import annotations

import numpy as np

_U64 = np.uint64
_GOLDEN = _U64(0x9E3779B97F4A7C15)
_MIX1 = _U64(0xBF58476D1CE4E5B9)
_MIX2 = _U64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_TWO_NEG53 = float(2.0**-53)


def _splitmix64(x: np.ndarray | np.uint64) -> np.ndarray | np.uint64:
    with np.errstate(over="ignore"):
        z = (x + _GOLDEN) & _U64(0xFFFFFFFFFFFFFFFF)
        z = (z ^ (z >> _U64(30))) * _MIX1
        z = (z ^ (z >> _U64(27))) * _MIX2
        return z ^ (z >> _U64(31))


def _hash_tag(tag: int | str) -> int:
    """Stable 64-bit hash for stream derivation (never Python's hash())."""
    if isinstance(tag, str):
        h = _FNV_OFFSET
        for b in tag.encode("utf-8"):
            h = ((h ^ b) * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
        return h
    return tag & 0xFFFFFFFFFFFFFFFF


def derive_stream_id(*tags: int | str) -> int:
    """Combine tags into a single stream id."""
    acc = _U64(0)
    for t in tags:
        acc = _splitmix64(acc ^ _U64(_hash_tag(t)))
    return int(acc)


class RngStream:
    """Deterministic stream of draws for a fixed (seed, stream id).

    The counter advances by the number of 64-bit words consumed, so a
    stream can be reconstructed mid-sequence from (seed, stream, counter).
    """

    __slots__ = ("seed", "stream", "counter")

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF
        self.stream = stream & 0xFFFFFFFFFFFFFFFF
        self.counter = counter

    def child(self, *tags: int | str) -> "RngStream":
        """Derive an independent stream; does not consume from this one."""
        sid = derive_stream_id(self.stream, *tags)
        return RngStream(self.seed, sid)

    def _raw(self, n: int) -> np.ndarray:
        key = _splitmix64(_splitmix64(_U64(self.seed)) ^ _U64(self.stream))
        idx = np.arange(self.counter, self.counter + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _splitmix64(key ^ (idx * _GOLDEN))

    def uniform(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Uniform draws in [0, 1) as float64."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        vals = (self._raw(n) >> _U64(11)).astype(np.float64) * _TWO_NEG53
        return vals.reshape(shape) if shape else vals[0]

    def normal(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Standard normal draws via Box-Muller, float64."""
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        n = int(np.prod(shape, dtype=np.int64)) if shape else 1
        m = (n + 1) // 2
        u = (self._raw(2 * m) >> _U64(11)).astype(np.float64) * _TWO_NEG53
        u1 = np.maximum(u[:m], 1e-300)
        u2 = u[m:]
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(ang), r * np.sin(ang)])[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, n: int, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Draws in [0, n). Modulo bias is negligible for n << 2**64."""
        if n <= 0:
            raise ValueError("integers() needs n >= 1")
        shape = (shape,) if isinstance(shape, int) else tuple(shape)
        cnt = int(np.prod(shape, dtype=np.int64)) if shape else 1
        vals = (self._raw(cnt) % _U64(n)).astype(np.int64)
        return vals.reshape(shape) if shape else int(vals[0])

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"
