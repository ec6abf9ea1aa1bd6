"""Variable-size tiny pointers: containers of geometric levels with overflow arrays.

A key hashes to one of ``max(1, ceil(N / ceil(log2 N)))`` containers.  A
container admits at most ``s`` live keys (``s`` the next power of two at or
above ``4 ceil(log2 N)``) and is split into ``log2 s`` levels.  Level ``i``
is a load-balancing table of ``s >> i`` buckets of ``B_LVL`` slots followed
by an overflow array of ``s >> i`` slots.

``L[c, i]`` counts live keys of container ``c`` stored at level ``i`` or
deeper (overflow included).  An allocation walks down the levels; when its
bucket at level ``i`` is full it moves on only if ``L[i+1] < s_{i+1}``,
otherwise it takes the lowest free overflow slot of level ``i``.  At the
deepest level a bucket miss goes straight to that level's overflow array.
This keeps ``L[i] <= s_i`` deterministically, so overflow arrays never run
out of room.

Pointer layout, MSB first::

    bucket hit:   0 | gamma(level + 1)           | 3-bit slot in bucket
    overflow:     1 | gamma(levels - 1 - level + 1) | log2(s >> level)-bit slot

Overflow pointers count levels from the back so that the deep, small
overflow arrays get short level codes.
"""

import math
from collections import namedtuple

import numpy as np
from numba import njit, uint64

from . import _bits
from .core import (
    ST_ALLOCS,
    ST_FAILURES,
    ST_FREES,
    ST_LAST_GROUP,
    ST_LIVE,
    ST_SUM_BITS,
    DereferenceTable,
    InvalidParams,
    check_delta,
    new_stats,
)
from .hashing import derive_seed, hash_stream_jit, hash_to_range_jit
from .lbt import bit_width, lbt_alloc, lbt_deref, lbt_free, new_lbt_state
from .workloads import make_replayer

B_LVL = 8
B_BITS = 3
CONTAINER_C = 4
LOOKUP_FROM = 3
# a wrapped table builds its primary for load factor 1 - delta^2 / WRAP_C
WRAP_C = 1

KIND_BUCKET = 0
KIND_OVERFLOW = 1

VTState = namedtuple(
    "VTState",
    "occ L stats hist nc s nlev per_container lvl_base sizes seed_c seed_l use_lookup lut lookup_from",
)
WVState = namedtuple("WVState", "primary secondary stats hist m1 has_secondary")

_ONE = np.uint64(1)


def container_shape(capacity):
    """``(ceil(log2 N), containers, s, levels)`` for a table holding ``N`` keys."""
    log_n = max(1, math.ceil(math.log2(capacity))) if capacity > 1 else 1
    nc = max(1, -(-capacity // log_n))
    s = 1 << (CONTAINER_C * log_n - 1).bit_length()
    return log_n, nc, s, s.bit_length() - 1


def slots_per_container(s):
    # levels i < log2 s hold s_i bucket slots * B_LVL plus s_i overflow slots
    return (B_LVL + 1) * (2 * s - 2)


def total_slots(capacity):
    _, nc, s, _ = container_shape(capacity)
    return nc * slots_per_container(s)


def capacity_for_slots(n_slots):
    """Largest key capacity whose table fits in ``n_slots`` slots (0 if none)."""
    best = 0
    for log_n in range(1, 64):
        lo, hi = (1 << (log_n - 1)) + 1, 1 << log_n
        if log_n == 1:
            lo = 1
        s = 1 << (CONTAINER_C * log_n - 1).bit_length()
        per = slots_per_container(s)
        cap = min(hi, log_n * (n_slots // per))
        if cap >= lo:
            best = max(best, cap)
        if lo > n_slots:
            break
    return best


def new_vt_state(capacity, seed, use_lookup=False):
    _, nc, s, nlev = container_shape(capacity)
    per = slots_per_container(s)
    sizes = np.array([s >> i for i in range(nlev + 1)], np.int64)
    lvl_base = np.zeros(nlev, np.int64)
    for i in range(1, nlev):
        lvl_base[i] = lvl_base[i - 1] + (B_LVL + 1) * sizes[i - 1]
    stats, hist = new_stats()
    lut = build_level_lookup(nlev, LOOKUP_FROM)
    return VTState(
        _bits.new_bitmap(nc * per), np.zeros((nc, nlev + 1), np.int32), stats, hist,
        np.int64(nc), np.int64(s), np.int64(nlev), np.int64(per), lvl_base, sizes,
        np.uint64(derive_seed(seed, 0)), np.uint64(derive_seed(seed, 1)),
        np.int64(1 if use_lookup else 0), lut, np.int64(LOOKUP_FROM),
    )


def build_level_lookup(nlev, d):
    """Table from packed tail state to ``level * 2 + kind`` for levels ``>= d``.

    Bit ``2t`` of the index says the key's bucket at level ``d + t`` is full,
    bit ``2t + 1`` says ``L[d + t + 1]`` has reached its cap.
    """
    tail = max(0, nlev - d)
    lut = np.zeros(1 << (2 * tail), np.int64)
    for phi in range(len(lut)):
        for t in range(tail):
            level = d + t
            if not (phi >> (2 * t)) & 1:
                lut[phi] = level * 2 + KIND_BUCKET
                break
            if level == nlev - 1 or (phi >> (2 * t + 1)) & 1:
                lut[phi] = level * 2 + KIND_OVERFLOW
                break
    return lut


@_bits.kernel
def _bucket_start(st, c, key, i):
    bucket = hash_stream_jit(st.seed_l, key, i, st.sizes[i])
    return c * st.per_container + st.lvl_base[i] + bucket * B_LVL


@_bits.kernel
def _overflow_start(st, c, i):
    return c * st.per_container + st.lvl_base[i] + B_LVL * st.sizes[i]


@_bits.kernel
def _bucket_full(st, c, key, i):
    lo = _bucket_start(st, c, key, i)
    return _bits.first_zero(st.occ, lo, lo + B_LVL) < 0


@_bits.kernel
def decide_iterative(st, c, key, start):
    """Level and kind the allocation of ``key`` lands on, scanning from ``start``."""
    for i in range(start, st.nlev):
        if not _bucket_full(st, c, key, i):
            return i, KIND_BUCKET
        if i == st.nlev - 1 or st.L[c, i + 1] >= st.sizes[i + 1]:
            return i, KIND_OVERFLOW
    return st.nlev - 1, KIND_OVERFLOW


@_bits.kernel
def tail_state(st, c, key):
    phi = 0
    for t in range(st.nlev - st.lookup_from):
        i = st.lookup_from + t
        if _bucket_full(st, c, key, i):
            phi |= 1 << (2 * t)
        if i + 1 < st.nlev and st.L[c, i + 1] >= st.sizes[i + 1]:
            phi |= 1 << (2 * t + 1)
    return phi


@_bits.kernel
def decide_lookup(st, c, key):
    d = st.lookup_from
    if d >= st.nlev:
        return decide_iterative(st, c, key, 0)
    for i in range(d):
        if not _bucket_full(st, c, key, i):
            return i, KIND_BUCKET
        if st.L[c, i + 1] >= st.sizes[i + 1]:
            return i, KIND_OVERFLOW
    code = st.lut[tail_state(st, c, key)]
    return code >> 1, code & 1


@_bits.kernel
def _gamma_len(v):
    return 2 * (63 - _lzcnt(uint64(v))) + 1


@_bits.kernel
def _lzcnt(x):
    n = 0
    while n < 64 and not (x >> uint64(63 - n)) & _ONE:
        n += 1
    return n


@_bits.kernel
def encode_pointer(st, level, kind, j):
    if kind == KIND_BUCKET:
        v = level + 1
        glen = _gamma_len(v)
        return (uint64(v) << uint64(B_BITS)) | uint64(j), 1 + glen + B_BITS
    v = st.nlev - level  # (levels - 1 - level) + 1
    glen = _gamma_len(v)
    w = st.nlev - level  # log2(s >> level)
    bits = (_ONE << uint64(glen + w)) | (uint64(v) << uint64(w)) | uint64(j)
    return bits, 1 + glen + w


@_bits.kernel
def decode_pointer(st, bits, length):
    """``(level, kind, j, ok)``; malformed input gives clamped values and ``ok = False``."""
    if length < 2 or length > 64:
        return 0, KIND_BUCKET, 0, False
    rest = length - 1
    kind = np.int64((bits >> uint64(rest)) & _ONE)
    z = 0
    while z < rest and not (bits >> uint64(rest - 1 - z)) & _ONE:
        z += 1
    glen = 2 * z + 1
    if glen > rest:
        return 0, kind, 0, False
    plen = rest - glen
    v = np.int64((bits >> uint64(plen)) & _bits.low_mask(z + 1))
    j = np.int64(bits & _bits.low_mask(plen)) if plen > 0 else 0
    if kind == KIND_BUCKET:
        level = v - 1
        ok = plen == B_BITS and level < st.nlev
        if level >= st.nlev:
            level = st.nlev - 1
        if j >= B_LVL:
            j = B_LVL - 1
        return level, kind, j, ok
    level = st.nlev - v
    ok = level >= 0
    if level < 0:
        level = 0
    ok = ok and plen == st.nlev - level
    if j >= st.sizes[level]:
        j = st.sizes[level] - 1
    return level, kind, j, ok


@_bits.kernel
def vt_alloc(st, key):
    st.stats[ST_ALLOCS] += 1
    c = hash_to_range_jit(st.seed_c, key, st.nc)
    st.stats[ST_LAST_GROUP] = c
    if st.L[c, 0] >= st.s:
        st.stats[ST_FAILURES] += 1
        return uint64(0), np.int64(-1)
    if st.use_lookup:
        level, kind = decide_lookup(st, c, key)
    else:
        level, kind = decide_iterative(st, c, key, 0)
    if kind == KIND_BUCKET:
        lo = _bucket_start(st, c, key, level)
        slot = _bits.first_zero(st.occ, lo, lo + B_LVL)
    else:
        lo = _overflow_start(st, c, level)
        slot = _bits.first_zero(st.occ, lo, lo + st.sizes[level])
        if slot < 0:
            raise AssertionError("overflow array full")
    st.occ[slot >> 6] |= _ONE << uint64(slot & 63)
    for i in range(level + 1):
        st.L[c, i] += 1
        if i > 0 and st.L[c, i] > st.sizes[i]:
            raise AssertionError("level counter above its cap")
    bits, length = encode_pointer(st, level, kind, slot - lo)
    st.stats[ST_LIVE] += 1
    st.stats[ST_SUM_BITS] += length
    st.hist[length] += 1
    return bits, length


@_bits.kernel
def _slot_of(st, c, key, level, kind, j):
    if kind == KIND_BUCKET:
        return _bucket_start(st, c, key, level) + j
    return _overflow_start(st, c, level) + j


@_bits.kernel
def vt_deref(st, key, bits, length):
    c = hash_to_range_jit(st.seed_c, key, st.nc)
    level, kind, j, ok = decode_pointer(st, bits, length)
    return _slot_of(st, c, key, level, kind, j)


@_bits.kernel
def vt_free(st, key, bits, length):
    level, kind, j, ok = decode_pointer(st, bits, length)
    if not ok:
        return False
    c = hash_to_range_jit(st.seed_c, key, st.nc)
    slot = _slot_of(st, c, key, level, kind, j)
    if _bits.get_bit(st.occ, slot) == 0:
        return False
    st.occ[slot >> 6] &= ~(_ONE << uint64(slot & 63))
    for i in range(level + 1):
        st.L[c, i] -= 1
    st.stats[ST_FREES] += 1
    st.stats[ST_LIVE] -= 1
    return True


@_bits.kernel
def vt_max_container(st):
    best = 0
    for c in range(st.nc):
        if st.L[c, 0] > best:
            best = st.L[c, 0]
    return np.int64(best)


@_bits.kernel
def vt_last_container_load(st):
    # the max over a replay of this equals the max of vt_max_container
    return np.int64(st.L[st.stats[ST_LAST_GROUP], 0])


@njit(cache=True, nogil=True)
def recount_levels(st):
    """Recompute ``L`` from the occupancy bitmap alone."""
    out = np.zeros(st.L.shape, np.int64)
    for c in range(st.nc):
        base = c * st.per_container
        for i in range(st.nlev):
            lo = base + st.lvl_base[i]
            out[c, i] = _bits.count_ones(st.occ, lo, lo + (B_LVL + 1) * st.sizes[i])
        for i in range(st.nlev - 2, -1, -1):
            out[c, i] += out[c, i + 1]
    return out


@njit(cache=True, nogil=True)
def overflow_counts(st):
    out = np.zeros((st.nc, st.nlev), np.int64)
    for c in range(st.nc):
        for i in range(st.nlev):
            lo = _overflow_start(st, c, i)
            out[c, i] = _bits.count_ones(st.occ, lo, lo + st.sizes[i])
    return out


class VariableTable(DereferenceTable):
    """Container-and-levels dereference table holding up to ``capacity`` keys.

    It has ``O(capacity)`` slots (about ``72`` to ``144`` per key of capacity).
    Set ``use_lookup`` to pick levels at or below ``LOOKUP_FROM`` with a
    precomputed table instead of the level-by-level scan; both give the same
    pointers.
    """

    _alloc = staticmethod(vt_alloc)
    _deref = staticmethod(vt_deref)
    _free = staticmethod(vt_free)
    _replay = staticmethod(make_replayer(vt_alloc, vt_deref, vt_free, vt_last_container_load))

    def __init__(self, capacity, seed=0, use_lookup=False):
        if capacity < 1:
            raise InvalidParams(f"variable table needs capacity >= 1, got {capacity}")
        self.capacity = capacity
        self.state = new_vt_state(capacity, seed, use_lookup)
        self.n_slots = int(self.state.nc * self.state.per_container)

    @classmethod
    def for_slots(cls, n_slots, seed=0, use_lookup=False):
        cap = capacity_for_slots(n_slots)
        if cap < 1:
            raise InvalidParams(f"{n_slots} slots cannot hold even one container")
        return cls(cap, seed, use_lookup)

    @property
    def num_containers(self):
        return int(self.state.nc)

    @property
    def s(self):
        return int(self.state.s)

    @property
    def levels(self):
        return int(self.state.nlev)

    def level_sizes(self):
        return [int(x) for x in self.state.sizes[: self.levels]]

    def container_of(self, key):
        return int(hash_to_range_jit(self.state.seed_c, np.uint64(key), self.state.nc))

    def decode(self, pointer):
        """``(level, kind, j)`` of a well-formed pointer, else ``None``."""
        level, kind, j, ok = decode_pointer(self.state, np.uint64(pointer.bits), pointer.length)
        return (int(level), int(kind), int(j)) if ok else None

    def counters(self):
        return self.state.L.astype(np.int64)

    def recount(self):
        return recount_levels(self.state)

    def overflow_occupancy(self):
        return overflow_counts(self.state)

    def check_capacities(self):
        """True when every ``L[i] <= s_i`` and every overflow array is within its size."""
        sizes = self.state.sizes
        L = self.counters()
        if (L[:, : self.levels] > sizes[None, : self.levels]).any():
            return False
        return bool((self.overflow_occupancy() <= sizes[None, : self.levels]).all())

    def occupied_slots(self):
        return np.nonzero(_bits.to_bool(self.state.occ, self.n_slots))[0]

    def metadata_bits(self):
        counter_bits = self.num_containers * (self.levels + 1) * (self.s.bit_length())
        return self.n_slots + counter_bits


# wrapped table: load-balancing primary, variable secondary


@_bits.kernel
def wv_alloc(st, key):
    st.stats[ST_ALLOCS] += 1
    bits, length = lbt_alloc(st.primary, key)
    if length >= 0:
        length += 1
    else:
        if not st.has_secondary:
            st.stats[ST_FAILURES] += 1
            return uint64(0), np.int64(-1)
        sbits, slen = vt_alloc(st.secondary, key)
        if slen < 0:
            st.stats[ST_FAILURES] += 1
            return uint64(0), np.int64(-1)
        bits = (_ONE << uint64(slen)) | sbits
        length = slen + 1
    st.stats[ST_LIVE] += 1
    st.stats[ST_SUM_BITS] += length
    st.hist[length] += 1
    return bits, length


@_bits.kernel
def wv_deref(st, key, bits, length):
    if length < 1:
        return lbt_deref(st.primary, key, uint64(0), st.primary.width)
    sub_len = length - 1
    sub = bits & _bits.low_mask(sub_len) if sub_len > 0 else uint64(0)
    if (bits >> uint64(sub_len)) & _ONE and st.has_secondary:
        return st.m1 + vt_deref(st.secondary, key, sub, sub_len)
    return lbt_deref(st.primary, key, sub, st.primary.width)


@_bits.kernel
def wv_free(st, key, bits, length):
    if length < 1:
        return False
    sub_len = length - 1
    sub = bits & _bits.low_mask(sub_len) if sub_len > 0 else uint64(0)
    if (bits >> uint64(sub_len)) & _ONE:
        if not st.has_secondary:
            return False
        freed = vt_free(st.secondary, key, sub, sub_len)
    else:
        freed = lbt_free(st.primary, key, sub, sub_len)
    if freed:
        st.stats[ST_FREES] += 1
        st.stats[ST_LIVE] -= 1
    return freed


@_bits.kernel
def wv_secondary_live(st):
    return st.secondary.stats[ST_LIVE]


class WrappedVariableTable(DereferenceTable):
    """Variable-size pointers at load factor ``1 - delta`` over ``n`` slots.

    The first ``ceil((1 - delta/2) n)`` slots form a load-balancing table
    built for load factor ``1 - delta^2``; its pointers are fixed width.  Keys
    it rejects go to a ``VariableTable`` fitted into the remaining slots.
    Each pointer is a selector bit (1 for the secondary) followed by the
    sub-pointer.
    """

    _alloc = staticmethod(wv_alloc)
    _deref = staticmethod(wv_deref)
    _free = staticmethod(wv_free)
    _replay = staticmethod(make_replayer(wv_alloc, wv_deref, wv_free, wv_secondary_live))

    def __init__(self, n, delta, seed=0, use_lookup=False):
        check_delta(delta)
        if n < 2:
            raise InvalidParams(f"wrapped variable table needs n >= 2, got {n}")
        self.n_slots = n
        self.delta = delta
        m1 = math.ceil((1 - delta / 2) * n)
        primary = new_lbt_state(m1, delta**2 / WRAP_C, derive_seed(seed, 0))
        cap = capacity_for_slots(n - m1)
        self.secondary_capacity = cap
        secondary = new_vt_state(max(cap, 1), derive_seed(seed, 1), use_lookup)
        stats, hist = new_stats()
        self.state = WVState(primary, secondary, stats, hist, np.int64(m1), cap > 0)

    @property
    def m1(self):
        return int(self.state.m1)

    @property
    def primary_width(self):
        return int(self.state.primary.width)

    @property
    def b_primary(self):
        return int(self.state.primary.b)

    @property
    def secondary_live(self):
        return int(self.state.secondary.stats[ST_LIVE])

    def secondary_view(self):
        """The secondary as a ``VariableTable`` sharing this table's state."""
        vt = VariableTable.__new__(VariableTable)
        vt.capacity = self.secondary_capacity
        vt.state = self.state.secondary
        vt.n_slots = int(vt.state.nc * vt.state.per_container) if self.state.has_secondary else 0
        return vt

    def occupied_slots(self):
        prim = np.nonzero(_bits.to_bool(self.state.primary.occ, self.m1))[0]
        if not self.state.has_secondary:
            return prim
        return np.concatenate([prim, self.secondary_view().occupied_slots() + self.m1])

    def metadata_bits(self):
        p = self.state.primary
        bits = int(p.num_buckets * p.b + len(p.occ) + 64 * len(p.hint))
        if self.state.has_secondary:
            bits += self.secondary_view().metadata_bits()
        return bits


def max_pointer_bits(capacity):
    """Longest pointer a ``VariableTable`` of this capacity can return."""
    nlev = container_shape(capacity)[3]
    gamma = 2 * (nlev.bit_length() - 1) + 1
    return 1 + gamma + max(B_BITS, nlev)
