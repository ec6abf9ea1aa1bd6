"""Word-level bitmap kernels used by the table implementations.

Bitmaps are flat ``uint64`` arrays; bit ``i`` lives in word ``i >> 6`` at
position ``i & 63``.  The two-level search keeps one summary bit per
occupancy word (set when the word is all ones) so that scanning a bucket of
``b`` slots costs ``O(b / 4096)`` word reads instead of ``O(b / 64)``.
"""

import numpy as np
from numba import njit, uint64

def kernel(fn):
    """Compile a table kernel.  Kernels never allocate, so reference counting
    is switched off; with it on, every field read from a nested state tuple
    costs an incref/decref pair."""
    return njit(cache=True, nogil=True, _nrt=False)(fn)


_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)
_ONE = np.uint64(1)
_ZERO = np.uint64(0)
_M1 = np.uint64(0x5555555555555555)
_M2 = np.uint64(0x3333333333333333)
_M4 = np.uint64(0x0F0F0F0F0F0F0F0F)
_H01 = np.uint64(0x0101010101010101)
_S1 = np.uint64(1)
_S2 = np.uint64(2)
_S4 = np.uint64(4)
_S56 = np.uint64(56)


@njit(cache=True, nogil=True, inline="always")
def popcount64(x):
    x = uint64(x)
    x = x - ((x >> _S1) & _M1)
    x = (x & _M2) + ((x >> _S2) & _M2)
    x = (x + (x >> _S4)) & _M4
    return np.int64((x * _H01) >> _S56)


@njit(cache=True, nogil=True, inline="always")
def ctz64(x):
    # x must be nonzero
    x = uint64(x)
    return popcount64((x & (~x + _ONE)) - _ONE)


@njit(cache=True, nogil=True, inline="always")
def low_mask(nbits):
    if nbits >= 64:
        return _ONES
    return (_ONE << uint64(nbits)) - _ONE


@njit(cache=True, nogil=True, inline="always")
def get_bit(words, i):
    return (words[i >> 6] >> uint64(i & 63)) & _ONE


@njit(cache=True, nogil=True)
def first_zero(words, lo, hi):
    """Lowest clear bit index in ``[lo, hi)``, or -1."""
    i = lo
    while i < hi:
        off = i & 63
        nbits = 64 - off
        if hi - i < nbits:
            nbits = hi - i
        w = (~words[i >> 6]) >> uint64(off)
        w &= low_mask(nbits)
        if w != _ZERO:
            return i + ctz64(w)
        i += nbits
    return -1


@njit(cache=True, nogil=True)
def count_ones(words, lo, hi):
    total = 0
    i = lo
    while i < hi:
        off = i & 63
        nbits = 64 - off
        if hi - i < nbits:
            nbits = hi - i
        w = (words[i >> 6] >> uint64(off)) & low_mask(nbits)
        total += popcount64(w)
        i += nbits
    return total


@njit(cache=True, nogil=True)
def first_zero_2level(occ, full, lo, hi):
    """Lowest clear bit of ``occ`` in ``[lo, hi)`` using the full-word summary."""
    wlo = lo >> 6
    whi = (hi - 1) >> 6
    if whi - wlo < 3:
        return first_zero(occ, lo, hi)
    # head word may be shared with the previous bucket
    head_end = (wlo + 1) << 6
    r = first_zero(occ, lo, head_end)
    if r >= 0:
        return r
    w = first_zero(full, wlo + 1, whi)
    if w >= 0:
        return first_zero(occ, w << 6, (w + 1) << 6)
    return first_zero(occ, whi << 6, hi)


@njit(cache=True, nogil=True, inline="always")
def set_bit_2level(occ, full, i):
    w = i >> 6
    occ[w] |= _ONE << uint64(i & 63)
    if occ[w] == _ONES:
        full[w >> 6] |= _ONE << uint64(w & 63)


@njit(cache=True, nogil=True, inline="always")
def clear_bit_2level(occ, full, i):
    w = i >> 6
    occ[w] &= ~(_ONE << uint64(i & 63))
    full[w >> 6] &= ~(_ONE << uint64(w & 63))


def words_for(nbits):
    return max(1, (nbits + 63) // 64)


def new_bitmap(nbits):
    return np.zeros(words_for(nbits), dtype=np.uint64)


def to_bool(words, nbits):
    """Unpack the first ``nbits`` bits of a little-endian word array."""
    return np.unpackbits(words.view(np.uint8), bitorder="little")[:nbits].astype(bool)
