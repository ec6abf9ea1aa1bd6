"""Fixed-size tiny pointers: load-balancing primary plus two-choice secondary.

The primary is a load-balancing table over ``ceil((1 - delta/2) n)`` slots,
with buckets sized for load factor ``1 - delta^2 / PRIMARY_C``.  Allocations it
rejects go to a power-of-two-choices table over the remaining slots, whose
buckets hold ``max(4, 2 ceil(log2 log2 n2))`` slots.  Every pointer is
``p_max`` bits: a selector bit (0 primary, 1 secondary) followed by the
sub-pointer, right-aligned and zero-padded.
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
from .hashing import derive_seed, hash_to_range_jit
from .lbt import bit_width, lbt_alloc, lbt_deref, lbt_free, new_lbt_state
from .workloads import make_replayer

PRIMARY_C = 1
MIN_SLOTS = 16

TCState = namedtuple("TCState", "occ stats hist n2 b2 num_buckets width seed1 seed2")
FixedState = namedtuple("FixedState", "primary secondary stats hist n m1 p_max")

_ONE = np.uint64(1)


def two_choice_bucket_size(n2):
    return max(4, 2 * math.ceil(math.log2(math.log2(max(n2, 4)))))


def new_tc_state(n2, seed):
    b2 = two_choice_bucket_size(n2)
    num_buckets = max(1, -(-n2 // b2))
    total = num_buckets * b2
    occ = _bits.new_bitmap(total)
    for i in range(n2, total):
        occ[i >> 6] |= np.uint64(1) << np.uint64(i & 63)
    stats, hist = new_stats()
    return TCState(occ, stats, hist, np.int64(n2), np.int64(b2), np.int64(num_buckets),
                   np.int64(bit_width(b2)), np.uint64(derive_seed(seed, 1)),
                   np.uint64(derive_seed(seed, 2)))


@_bits.kernel
def tc_buckets(st, key):
    return (hash_to_range_jit(st.seed1, key, st.num_buckets),
            hash_to_range_jit(st.seed2, key, st.num_buckets))


@_bits.kernel
def tc_alloc(st, key):
    st.stats[ST_ALLOCS] += 1
    h1, h2 = tc_buckets(st, key)
    free1 = st.b2 - _bits.count_ones(st.occ, h1 * st.b2, (h1 + 1) * st.b2)
    free2 = st.b2 - _bits.count_ones(st.occ, h2 * st.b2, (h2 + 1) * st.b2)
    # ties go to the first hash
    choice = 0
    bucket = h1
    if free2 > free1:
        choice = 1
        bucket = h2
    if st.n2 == 0 or (free1 == 0 and free2 == 0):
        st.stats[ST_FAILURES] += 1
        return uint64(0), np.int64(-1)
    lo = bucket * st.b2
    slot = _bits.first_zero(st.occ, lo, lo + st.b2)
    st.occ[slot >> 6] |= _ONE << uint64(slot & 63)
    length = st.width + 1
    st.stats[ST_LIVE] += 1
    st.stats[ST_SUM_BITS] += length
    st.hist[length] += 1
    return (uint64(choice) << uint64(st.width)) | uint64(slot - lo), length


@_bits.kernel
def tc_deref(st, key, bits):
    h1, h2 = tc_buckets(st, key)
    bucket = h2 if (bits >> uint64(st.width)) & _ONE else h1
    off = np.int64(bits & _bits.low_mask(st.width))
    if off >= st.b2:
        off = st.b2 - 1
    slot = bucket * st.b2 + off
    if slot >= st.n2:
        slot = st.n2 - 1
    return slot


@_bits.kernel
def tc_free(st, key, bits):
    if st.n2 == 0:
        return False
    off = np.int64(bits & _bits.low_mask(st.width))
    if off >= st.b2:
        return False
    h1, h2 = tc_buckets(st, key)
    bucket = h2 if (bits >> uint64(st.width)) & _ONE else h1
    slot = bucket * st.b2 + off
    if slot >= st.n2 or _bits.get_bit(st.occ, slot) == 0:
        return False
    st.occ[slot >> 6] &= ~(_ONE << uint64(slot & 63))
    st.stats[ST_FREES] += 1
    st.stats[ST_LIVE] -= 1
    return True


@_bits.kernel
def fx_alloc(st, key):
    st.stats[ST_ALLOCS] += 1
    bits, length = lbt_alloc(st.primary, key)
    if length < 0:
        sbits, slen = tc_alloc(st.secondary, key)
        if slen < 0:
            st.stats[ST_FAILURES] += 1
            return uint64(0), np.int64(-1)
        bits = (_ONE << uint64(st.p_max - 1)) | sbits
    st.stats[ST_LIVE] += 1
    st.stats[ST_SUM_BITS] += st.p_max
    st.hist[st.p_max] += 1
    return bits, st.p_max


@_bits.kernel
def fx_deref(st, key, bits, length):
    sub = bits & _bits.low_mask(st.p_max - 1)
    if (bits >> uint64(st.p_max - 1)) & _ONE:
        if st.secondary.n2 == 0:
            return st.m1 - 1
        return st.m1 + tc_deref(st.secondary, key, sub)
    return lbt_deref(st.primary, key, sub, st.primary.width)


@_bits.kernel
def fx_free(st, key, bits, length):
    sub = bits & _bits.low_mask(st.p_max - 1)
    if (bits >> uint64(st.p_max - 1)) & _ONE:
        freed = tc_free(st.secondary, key, sub)
    else:
        freed = lbt_free(st.primary, key, sub, st.primary.width)
    if freed:
        st.stats[ST_FREES] += 1
        st.stats[ST_LIVE] -= 1
    return freed


@_bits.kernel
def fx_secondary_live(st):
    return st.secondary.stats[ST_LIVE]


class TwoChoiceTable(DereferenceTable):
    """Power-of-two-choices dereference table on its own (low load factor)."""

    def __init__(self, n2, seed=0):
        if n2 < 1:
            raise InvalidParams("two-choice table needs at least one slot")
        self.state = new_tc_state(n2, seed)
        self.n_slots = n2

    def _alloc(self, st, key):
        return tc_alloc(st, key)

    def _deref(self, st, key, bits, length):
        return tc_deref(st, key, bits)

    def _free(self, st, key, bits, length):
        tc_free(st, key, bits)

    @property
    def b2(self):
        return int(self.state.b2)

    @property
    def num_buckets(self):
        return int(self.state.num_buckets)

    def buckets_of(self, key):
        h1, h2 = tc_buckets(self.state, np.uint64(key))
        return int(h1), int(h2)

    def free_in_bucket(self, bucket):
        b2 = self.b2
        return b2 - int(_bits.count_ones(self.state.occ, bucket * b2, (bucket + 1) * b2))

    def occupied_slots(self):
        return np.nonzero(_bits.to_bool(self.state.occ, self.n_slots))[0]


class FixedTable(DereferenceTable):
    """Dereference table with constant-width pointers and load factor ``1 - delta``."""

    _alloc = staticmethod(fx_alloc)
    _deref = staticmethod(fx_deref)
    _free = staticmethod(fx_free)
    _replay = staticmethod(make_replayer(fx_alloc, fx_deref, fx_free, fx_secondary_live))

    def __init__(self, n, delta, seed=0):
        check_delta(delta)
        if n < MIN_SLOTS:
            raise InvalidParams(f"fixed table needs n >= {MIN_SLOTS}, got {n}")
        self.n_slots = n
        self.delta = delta
        m1 = math.ceil((1 - delta / 2) * n)
        n2 = n - m1
        primary = new_lbt_state(m1, delta**2 / PRIMARY_C, derive_seed(seed, 0))
        secondary = new_tc_state(n2, derive_seed(seed, 1))
        p_max = 1 + max(int(primary.width), 1 + int(secondary.width))
        stats, hist = new_stats()
        self.state = FixedState(primary, secondary, stats, hist, np.int64(n), np.int64(m1), np.int64(p_max))

    @property
    def m1(self):
        return int(self.state.m1)

    @property
    def n2(self):
        return int(self.state.secondary.n2)

    @property
    def p_max(self):
        return int(self.state.p_max)

    @property
    def b_primary(self):
        return int(self.state.primary.b)

    @property
    def b2(self):
        return int(self.state.secondary.b2)

    @property
    def secondary_live(self):
        return int(self.state.secondary.stats[ST_LIVE])

    def primary_bucket_of(self, key):
        p = self.state.primary
        return int(hash_to_range_jit(p.seed, np.uint64(key), p.num_buckets))

    def occupied_slots(self):
        prim = np.nonzero(_bits.to_bool(self.state.primary.occ, self.m1))[0]
        sec = np.nonzero(_bits.to_bool(self.state.secondary.occ, self.n2))[0] + self.m1
        return np.concatenate([prim, sec])

    def metadata_bits(self):
        p, s = self.state.primary, self.state.secondary
        return int(p.num_buckets * p.b + len(p.occ) + 64 * len(p.hint) + s.num_buckets * s.b2)
