"""Seeded 64-bit hashing shared by every table.

All randomness in the package flows through explicit integer seeds.  The
mixer is the MurmurHash3 64-bit finalizer applied twice; range reduction is
multiply-shift (high word of ``hash * range``), so no modulo bias shows up
for power-of-two ranges.
"""

import numpy as np
from numba import njit, uint64

MASK64 = (1 << 64) - 1

_C1 = np.uint64(0xFF51AFD7ED558CCD)
_C2 = np.uint64(0xC4CEB9FE1A85EC53)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM = np.uint64(0xD6E8FEB86659FD93)
_LO32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S33 = np.uint64(33)
_ONE = np.uint64(1)


@njit(cache=True, nogil=True, inline="always")
def mix64(x):
    z = uint64(x)
    z ^= z >> _S33
    z *= _C1
    z ^= z >> _S33
    z *= _C2
    z ^= z >> _S33
    return z


@njit(cache=True, nogil=True, inline="always")
def mulhi64(a, b):
    """High 64 bits of the 128-bit product ``a * b``."""
    a = uint64(a)
    b = uint64(b)
    a_lo = a & _LO32
    a_hi = a >> _S32
    b_lo = b & _LO32
    b_hi = b >> _S32
    lo_lo = a_lo * b_lo
    hi_lo = a_hi * b_lo
    lo_hi = a_lo * b_hi
    hi_hi = a_hi * b_hi
    cross = (lo_lo >> _S32) + (hi_lo & _LO32) + lo_hi
    return (hi_lo >> _S32) + (cross >> _S32) + hi_hi


@njit(cache=True, nogil=True, inline="always")
def hash64(seed, key):
    s = uint64(seed)
    return mix64(mix64(uint64(key) ^ s) ^ (s * _GOLDEN + _STREAM))


@njit(cache=True, nogil=True, inline="always")
def stream_seed(seed, i):
    """Seed of the ``i``-th member of the hash family rooted at ``seed``."""
    return uint64(seed) ^ mix64((uint64(i) + _ONE) * _GOLDEN)


@njit(cache=True, nogil=True, inline="always")
def reduce_range(h, r):
    return np.int64(mulhi64(h, r))


@njit(cache=True, nogil=True)
def hash_to_range_jit(seed, key, r):
    return reduce_range(hash64(seed, key), uint64(r))


@njit(cache=True, nogil=True)
def hash_stream_jit(seed, key, i, r):
    return reduce_range(hash64(stream_seed(seed, i), key), uint64(r))


@njit(cache=True, nogil=True)
def hash_to_range_many(seed, keys, r):
    out = np.empty(keys.shape[0], np.int64)
    s = uint64(seed)
    rr = uint64(r)
    for t in range(keys.shape[0]):
        out[t] = reduce_range(hash64(s, keys[t]), rr)
    return out


@njit(cache=True, nogil=True)
def hash_stream_many(seed, keys, i, r):
    out = np.empty(keys.shape[0], np.int64)
    s = stream_seed(seed, i)
    rr = uint64(r)
    for t in range(keys.shape[0]):
        out[t] = reduce_range(hash64(s, keys[t]), rr)
    return out


@njit(cache=True)
def _derive(seed, label):
    return mix64(stream_seed(seed, label))


def _u64(x):
    return np.uint64(int(x) & MASK64)


def hash_to_range(seed, key, range_):
    """Map ``key`` to ``[0, range_)`` deterministically under ``seed``."""
    if range_ < 1:
        raise ValueError("range must be >= 1")
    return int(hash_to_range_jit(_u64(seed), _u64(key), _u64(range_)))


def hash_stream(seed, key, i, range_):
    """``i``-th hash of ``key`` in the seeded family, reduced to ``[0, range_)``."""
    if range_ < 1:
        raise ValueError("range must be >= 1")
    if i < 0:
        raise ValueError("stream index must be nonnegative")
    return int(hash_stream_jit(_u64(seed), _u64(key), np.uint64(i), _u64(range_)))


def derive_seed(seed, *labels):
    """Derive a child seed from ``seed`` and a path of integer labels."""
    s = _u64(seed)
    for label in labels:
        s = _u64(_derive(s, _u64(label)))
    return int(s)
