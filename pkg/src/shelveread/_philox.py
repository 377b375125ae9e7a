"""Vectorized Philox4x64-10 counter-based random bits.

The simulator keys every shot by its index (and every 256-bit block within a
shot by a block counter), so any shot of any batch can be regenerated in
isolation and batches are embarrassingly parallel with no stream state.
numpy's own Philox bit generator implements the same function but only walks
a sequential counter, so the round function is reimplemented here for
arbitrary vectorized counters.  It is checked against
``numpy.random.Philox.random_raw`` in the test suite.
"""

from __future__ import annotations

import numpy as np

__all__ = ["philox4x64", "to_uniform"]

_M0 = 0xD2E7470EE14C6C93
_M1 = 0xCA5A826395121157
_W0 = 0x9E3779B97F4A7C15
_W1 = 0xBB67AE8584CAA73B
_MASK32 = np.uint64(0xFFFFFFFF)
_MASK64 = (1 << 64) - 1
_SHIFT32 = np.uint64(32)
_ROUNDS = 10
_CHUNK = 1 << 20


def _mulhilo(a: int, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Full 128-bit product of a constant and a uint64 array, as (hi, lo)."""
    a_lo = np.uint64(a & 0xFFFFFFFF)
    a_hi = np.uint64(a >> 32)
    b_lo = b & _MASK32
    b_hi = b >> _SHIFT32
    lo_lo = a_lo * b_lo
    mid1 = a_hi * b_lo
    mid2 = a_lo * b_hi
    carry = ((lo_lo >> _SHIFT32) + (mid1 & _MASK32) + (mid2 & _MASK32)) >> _SHIFT32
    hi = a_hi * b_hi + (mid1 >> _SHIFT32) + (mid2 >> _SHIFT32) + carry
    lo = np.uint64(a) * b  # uint64 multiplication wraps mod 2**64
    return hi, lo


def _key_schedule(key: int):
    # Round keys precomputed with Python ints: uint64 scalar wrap-around
    # raises overflow warnings under numpy 2.
    k0, k1 = key, 0
    schedule = []
    for _ in range(_ROUNDS):
        schedule.append((np.uint64(k0), np.uint64(k1)))
        k0 = (k0 + _W0) & _MASK64
        k1 = (k1 + _W1) & _MASK64
    return schedule


def _philox_rounds(c0, c1, c2, c3, schedule):
    for k0, k1 in schedule:
        hi0, lo0 = _mulhilo(_M0, c0)
        hi1, lo1 = _mulhilo(_M1, c2)
        c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def philox4x64(c0, c1, c2, c3, key: int):
    """Philox4x64-10 block function over broadcastable uint64 counters.

    ``key`` is a 64-bit integer (the high key word is zero).  Returns the
    four output words as uint64 arrays of the broadcast shape.  Large inputs
    are processed in cache-sized chunks; the output is independent of the
    chunking.
    """
    if not 0 <= key < 2**64:
        raise ValueError("key must be a 64-bit unsigned integer")
    parts = np.broadcast_arrays(
        *(np.asarray(c, dtype=np.uint64) for c in (c0, c1, c2, c3))
    )
    shape = parts[0].shape
    flat = [np.ascontiguousarray(p).reshape(-1) for p in parts]
    n = flat[0].size
    schedule = _key_schedule(key)
    outs = [np.empty(n, dtype=np.uint64) for _ in range(4)]
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        words = _philox_rounds(*(f[lo:hi] for f in flat), schedule)
        for out, w in zip(outs, words):
            out[lo:hi] = w
    return tuple(out.reshape(shape) for out in outs)


def to_uniform(words: np.ndarray) -> np.ndarray:
    """Map 64-bit words to float64 uniforms on [0, 1) (53 mantissa bits)."""
    return (words >> np.uint64(11)).astype(np.float64) * (2.0**-53)
