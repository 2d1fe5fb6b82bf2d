"""Portable seeded randomness.

Simulation draws use a counter-based SplitMix64 stream: word ``i`` of stream
``s`` is ``mix64(s + (i + 1) * 0x9E3779B97F4A7C15)`` with the standard
SplitMix64 finaliser. Uniform indices below ``k`` are produced by rejection:
words ``>= 2**64 - (2**64 mod k)`` are discarded and the rest reduced mod
``k``. Both steps are pure integer arithmetic, so draws are identical on every
platform and can be generated in bulk with numpy.

Seeds for independent stages are derived from one root seed by hashing the
stage name (and any integer labels) with BLAKE2b; see :func:`derive_seed`.
"""

from __future__ import annotations

import hashlib

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1


def derive_seed(root: int, stage: str, *labels: int) -> int:
    """64-bit seed for ``stage`` (plus integer labels) under ``root``."""
    h = hashlib.blake2b(digest_size=8)
    h.update((int(root) & _MASK64).to_bytes(8, "little"))
    h.update(stage.encode("utf-8"))
    for lab in labels:
        h.update(b"\x00")
        h.update((int(lab) & _MASK64).to_bytes(8, "little"))
    return int.from_bytes(h.digest(), "little")


def mix64(x: np.ndarray) -> np.ndarray:
    x = x.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        x ^= x >> np.uint64(30)
        x *= _M1
        x ^= x >> np.uint64(27)
        x *= _M2
        x ^= x >> np.uint64(31)
    return x


def words(seed: int, start: int, count: int) -> np.ndarray:
    """Words ``start .. start+count-1`` of the stream keyed by ``seed``."""
    ctr = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = np.uint64(int(seed) & _MASK64) + ctr * GOLDEN
    return mix64(x)


def uniform_indices(seed: int, count: int, k: int) -> np.ndarray:
    """``count`` i.i.d. uniform integers in ``[0, k)`` (rejection sampling)."""
    if k <= 0:
        raise ValueError("k must be positive")
    limit = (1 << 64) - ((1 << 64) % k)
    out = np.empty(count, dtype=np.int64)
    filled = 0
    pos = 0
    while filled < count:
        need = count - filled
        block = words(seed, pos, need + need // 64 + 8)
        pos += block.size
        if limit < (1 << 64):
            block = block[block < np.uint64(limit)]
        take = min(need, block.size)
        out[filled : filled + take] = (block[:take] % np.uint64(k)).astype(np.int64)
        filled += take
    return out


def permutations(seed: int, rows: int, n: int) -> np.ndarray:
    """``rows`` independent uniform permutations of ``range(n)``.

    Each row sorts ``n`` stream words; equal words (probability ~n^2/2^64)
    keep index order.
    """
    keys = words(seed, 0, rows * n).reshape(rows, n)
    return np.argsort(keys, axis=1, kind="stable").astype(np.int64)


def numpy_generator(root: int, stage: str, *labels: int) -> np.random.Generator:
    """PCG64 generator for non-simulation stages (synthesis, fold splits)."""
    return np.random.Generator(np.random.PCG64(derive_seed(root, stage, *labels)))
