"""Deterministic random numbers built on the public-domain splitmix64 mixer.

The generator is counter based: draw ``i`` of a stream with seed ``s`` is
``mix64(s + (i+1)*GOLDEN)``, where ``mix64`` is the splitmix64 finalizer and
GOLDEN is the 64-bit golden-ratio constant. This makes bulk generation a pure
vectorized function of (seed, counter range), gives bit-identical streams on
every platform, and lets substreams be derived from keys such as
(epoch, sample index) without any dependence on iteration order.
"""

from __future__ import annotations

import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer (Steele/Lea/Flood, public domain). Multiplication
    wraps modulo 2**64 by construction."""
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
        return z ^ (z >> np.uint64(31))


def _key_to_u64(key) -> np.uint64:
    if isinstance(key, (int, np.integer)):
        return np.uint64(int(key) & 0xFFFFFFFFFFFFFFFF)
    if isinstance(key, str):
        digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
        return np.uint64(int.from_bytes(digest, "little"))
    raise TypeError(f"substream keys must be int or str, got {type(key).__name__}")


class Rng:
    """Seeded deterministic generator.

    Same seed gives the identical value stream regardless of platform.
    A single Rng is single-owner; for concurrent or order-independent use,
    derive independent children with :meth:`substream`.
    """

    def __init__(self, seed: int):
        self.seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._counter = 0

    def substream(self, *keys) -> "Rng":
        """Derive an independent child stream from hashable keys."""
        h = self.seed
        with np.errstate(over="ignore"):
            for key in keys:
                h = _mix64((h + GOLDEN) ^ _key_to_u64(key))
        child = Rng(0)
        child.seed = h
        return child

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(self.seed + idx * GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """float32 tensor of uniforms in [0, 1) (24 mantissa bits)."""
        n = int(np.prod(shape)) if shape else 1
        bits = self._raw(n) >> np.uint64(40)
        out = (bits.astype(np.float32) * np.float32(2.0 ** -24)).reshape(shape)
        return out

    def uniform64(self, shape=()) -> np.ndarray:
        """float64 uniforms in [0, 1) (53 bits), for internal transforms."""
        n = int(np.prod(shape)) if shape else 1
        bits = self._raw(n) >> np.uint64(11)
        return (bits.astype(np.float64) * 2.0 ** -53).reshape(shape)

    def normal(self, shape=(), mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        """float32 normals via the Box-Muller transform from uniforms."""
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        n = int(np.prod(shape)) if shape else 1
        # u1 in (0, 1] so log never sees zero.
        u1 = ((self._raw(n) >> np.uint64(11)).astype(np.float64) + 1.0) * 2.0 ** -53
        u2 = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        out = mean + std * z
        return out.astype(np.float32).reshape(shape)

    def integers(self, n: int, high: int) -> np.ndarray:
        """n integers uniform in [0, high)."""
        if high <= 0:
            raise ValueError("high must be positive")
        u = (self._raw(n) >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
        return np.minimum((u * high).astype(np.int64), high - 1)

    def integer(self, high: int) -> int:
        return int(self.integers(1, high)[0])

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates permutation of range(n)."""
        perm = np.arange(n)
        for i in range(n - 1, 0, -1):
            j = self.integer(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def shuffle(self, items: list) -> list:
        return [items[i] for i in self.permutation(len(items))]


def rng_uniform(rng: Rng, shape) -> np.ndarray:
    return rng.uniform(tuple(shape))


def rng_normal(rng: Rng, shape, mean: float, std: float) -> np.ndarray:
    return rng.normal(tuple(shape), mean, std)
