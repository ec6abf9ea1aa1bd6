"""Load-balancing table: one hash, fixed-size buckets, allowed to fail.

A key hashes to one bucket of ``b`` slots; it gets the lowest free slot
there and the pointer is that slot's index in exactly ``ceil(log2 b)`` bits.
A full bucket fails the allocation.
"""

import math
from collections import namedtuple

import numpy as np
from numba import uint64

from . import _bits
from .core import (
    ST_ALLOCS,
    ST_FAILURES,
    ST_FREES,
    ST_LIVE,
    ST_SUM_BITS,
    DereferenceTable,
    InvalidParams,
    check_delta,
    new_stats,
)
from .hashing import hash_to_range_jit
from .workloads import make_replayer

BUCKET_CONST = 4
MIN_BUCKET = 8

HINT_MIN_BUCKET = 4096

LBTState = namedtuple("LBTState", "occ full hint stats hist m b num_buckets width seed")


def bucket_size(m, delta):
    """``clamp(ceil(4 / delta^2 * max(1, log2(1/delta))), 8, m)``."""
    check_delta(delta)
    raw = BUCKET_CONST / delta**2 * max(1.0, math.log2(1.0 / delta))
    b = math.ceil(raw - 1e-9)
    return max(MIN_BUCKET, min(b, m))


def bit_width(b):
    return (b - 1).bit_length()


def new_lbt_state(m, delta, seed, b=None):
    if m < 1:
        raise InvalidParams(f"load-balancing table needs m >= 1, got {m}")
    if b is None:
        b = bucket_size(m, delta)
    num_buckets = -(-m // b)
    total = num_buckets * b
    occ = _bits.new_bitmap(total)
    full = _bits.new_bitmap(len(occ))
    for i in range(m, total):
        _bits.set_bit_2level(occ, full, i)
    # lower bound on the lowest free slot, kept only for large buckets
    hint = np.zeros(num_buckets if b >= HINT_MIN_BUCKET else 1, np.int64)
    stats, hist = new_stats()
    return LBTState(occ, full, hint, stats, hist, np.int64(m), np.int64(b), np.int64(num_buckets),
                    np.int64(bit_width(b)), np.uint64(seed))


@_bits.kernel
def lbt_alloc(st, key):
    st.stats[ST_ALLOCS] += 1
    bucket = hash_to_range_jit(st.seed, key, st.num_buckets)
    lo = bucket * st.b
    start = lo
    hinted = st.b >= HINT_MIN_BUCKET
    if hinted:
        start += st.hint[bucket]
    slot = _bits.first_zero_2level(st.occ, st.full, start, lo + st.b)
    if slot < 0:
        if hinted:
            st.hint[bucket] = st.b
        st.stats[ST_FAILURES] += 1
        return uint64(0), np.int64(-1)
    _bits.set_bit_2level(st.occ, st.full, slot)
    if hinted:
        st.hint[bucket] = slot - lo + 1
    st.stats[ST_LIVE] += 1
    st.stats[ST_SUM_BITS] += st.width
    st.hist[st.width] += 1
    return uint64(slot - lo), st.width


@_bits.kernel
def lbt_deref(st, key, bits, length):
    bucket = hash_to_range_jit(st.seed, key, st.num_buckets)
    off = np.int64(bits & _bits.low_mask(st.width)) if st.width < 64 else np.int64(bits)
    if off >= st.b:
        off = st.b - 1
    slot = bucket * st.b + off
    if slot >= st.m:
        slot = st.m - 1
    return slot


@_bits.kernel
def lbt_free(st, key, bits, length):
    if length != st.width or bits >= uint64(st.b):
        return False
    bucket = hash_to_range_jit(st.seed, key, st.num_buckets)
    slot = bucket * st.b + np.int64(bits)
    if slot >= st.m or _bits.get_bit(st.occ, slot) == 0:
        return False
    _bits.clear_bit_2level(st.occ, st.full, slot)
    if st.b >= HINT_MIN_BUCKET and np.int64(bits) < st.hint[bucket]:
        st.hint[bucket] = np.int64(bits)
    st.stats[ST_FREES] += 1
    st.stats[ST_LIVE] -= 1
    return True


@_bits.kernel
def lbt_live(st):
    return st.stats[ST_LIVE]


@_bits.kernel
def _no_metric(st):
    return 0


class LoadBalancingTable(DereferenceTable):
    """Bucketed allocator over ``m`` slots sized for load factor ``1 - delta``."""

    _alloc = staticmethod(lbt_alloc)
    _deref = staticmethod(lbt_deref)
    _free = staticmethod(lbt_free)
    _replay = staticmethod(make_replayer(lbt_alloc, lbt_deref, lbt_free, _no_metric))

    def __init__(self, m, delta, seed=0, b=None):
        self.delta = delta
        self.state = new_lbt_state(m, delta, seed, b)
        self.n_slots = m

    @property
    def m(self):
        return int(self.state.m)

    @property
    def b(self):
        return int(self.state.b)

    @property
    def num_buckets(self):
        return int(self.state.num_buckets)

    @property
    def pointer_width(self):
        return int(self.state.width)

    def bucket_of(self, key):
        return int(hash_to_range_jit(self.state.seed, np.uint64(key), self.state.num_buckets))

    def occupancy_popcount(self):
        """Set occupancy bits over real slots (padding excluded)."""
        return int(_bits.count_ones(self.state.occ, 0, self.m))

    def occupied_slots(self):
        return np.nonzero(_bits.to_bool(self.state.occ, self.m))[0]

    def metadata_bits(self):
        # one occupancy bit per slot (padding included) plus one summary bit per word
        return self.num_buckets * self.b + len(self.state.occ) + 64 * len(self.state.hint)
