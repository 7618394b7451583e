"""Dense float64 primitives and a counter-based random source.

Matrices and vectors are plain ``numpy.float64`` arrays. The random source is
SplitMix64 evaluated in counter mode: draw ``k`` of a stream with seed ``s``
is ``mix(s + (k + 1) * GOLDEN)`` (mod 2**64), so a stream is a pure function
of ``(seed, counter)`` and can be resumed from those two integers alone.
"""

from __future__ import annotations

import hashlib

import numpy as np

GOLDEN = 0x9E3779B97F4A7C15
MIX1 = 0xBF58476D1CE4E5B9
MIX2 = 0x94D049BB133111EB
MASK64 = (1 << 64) - 1

_TWO_NEG_53 = 2.0**-53


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {arr.shape}")
    return arr


def matvec(m, v) -> np.ndarray:
    m = as_matrix(m)
    v = as_vector(v)
    if m.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {m.shape} times vector of length {v.shape[0]}")
    return m @ v


def sigmoid(x):
    """Logistic function, evaluated without overflow for large ``|x|``."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def tanh_vec(x):
    return np.tanh(np.asarray(x, dtype=np.float64))


def _mix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * np.uint64(MIX1)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(MIX2)
    return z ^ (z >> np.uint64(31))


def mix64(x: int) -> int:
    """Scalar SplitMix64 finalizer on a Python int."""
    z = x & MASK64
    z = ((z ^ (z >> 30)) * MIX1) & MASK64
    z = ((z ^ (z >> 27)) * MIX2) & MASK64
    return z ^ (z >> 31)


def derive_seed(seed: int, key) -> int:
    """Derive an independent 64-bit stream seed from ``seed`` and a key.

    ``key`` may be an int or any object with a stable ``str``; strings are
    hashed with BLAKE2b so the result does not depend on ``PYTHONHASHSEED``.
    """
    if isinstance(key, (int, np.integer)) and not isinstance(key, bool):
        k = int(key) & MASK64
    else:
        digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
        k = int.from_bytes(digest, "little")
    return mix64((mix64(seed & MASK64) ^ k) + GOLDEN)


class Rng:
    """Deterministic random stream identified by ``(seed, counter)``."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & MASK64
        self.counter = int(counter)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, counter={self.counter})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Rng) and (self.seed, self.counter) == (other.seed, other.counter)

    def state(self) -> tuple[int, int]:
        return self.seed, self.counter

    def spawn(self, key) -> "Rng":
        return Rng(derive_seed(self.seed, key))

    def next_uint64(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be nonnegative")
        k = np.arange(self.counter + 1, self.counter + 1 + n, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + k * np.uint64(GOLDEN)
            return _mix(z)

    def random(self, n: int) -> np.ndarray:
        """``n`` uniforms on [0, 1) with 53 bits of resolution."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53

    def standard_normal(self, n: int) -> np.ndarray:
        """Box-Muller normals. Both outputs of every pair are consumed, so a
        request for ``n`` values always advances the counter by ``2*ceil(n/2)``.
        """
        pairs = (n + 1) // 2
        raw = self.next_uint64(2 * pairs)
        u1 = ((raw[0::2] >> np.uint64(11)).astype(np.float64) + 1.0) * _TWO_NEG_53
        u2 = (raw[1::2] >> np.uint64(11)).astype(np.float64) * _TWO_NEG_53
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        out = np.empty(2 * pairs, dtype=np.float64)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def permutation(self, n: int) -> np.ndarray:
        keys = self.next_uint64(n)
        return np.argsort(keys, kind="stable")

    def integers(self, low: int, high: int, n: int) -> np.ndarray:
        """``n`` integers uniform on ``[low, high)``."""
        if high <= low:
            raise ValueError("empty integer range")
        return low + np.floor(self.random(n) * (high - low)).astype(np.int64)


def draw_std_normal(rng: Rng, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return rng.standard_normal(n)
