"""Dereference-table contract, pointer type, stats and errors.

Every table exposes ``allocate(key) -> TinyPointer | None``,
``dereference(key, p) -> int`` and ``free(key, p)``.  A failed allocation
is the value ``None``, never an exception.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from numba import typeof, types
from numba.core.dispatcher import Dispatcher

MAX_POINTER_BITS = 64

# Documented bound on metadata: every table keeps at most this many bits of
# bookkeeping per store slot (occupancy bitmaps, summaries, counters).
METADATA_BITS_PER_SLOT = 2

# stats array layout shared with the numba kernels
ST_ALLOCS = 0
ST_FREES = 1
ST_FAILURES = 2
ST_SUM_BITS = 3
ST_LIVE = 4
ST_LAST_GROUP = 5  # bucket or container the latest allocation hashed to
STATS_LEN = 8
HIST_LEN = MAX_POINTER_BITS + 1


class TinyPtrError(Exception):
    pass


class InvalidParams(TinyPtrError, ValueError):
    pass


class ContractViolation(TinyPtrError):
    """Caller broke a precondition; only detected in shadow-verification mode."""


class AllocationFailure(TinyPtrError):
    pass


class CapacityExceeded(TinyPtrError):
    pass


@dataclass(frozen=True)
class TinyPointer:
    """A bit string of ``length`` bits; ``bits`` holds it MSB-first."""

    bits: int
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= MAX_POINTER_BITS:
            raise ValueError(f"pointer length {self.length} outside [0, 64]")
        if self.bits < 0 or self.bits >> self.length:
            raise ValueError(f"bits {self.bits:#x} do not fit in {self.length} bits")

    def __str__(self):
        return format(self.bits, f"0{self.length}b") if self.length else ""

    @classmethod
    def from_str(cls, s):
        return cls(int(s, 2) if s else 0, len(s))

    @property
    def index(self):
        """Position of this string when bit strings are listed by length, then lexicographically."""
        return (1 << self.length) + self.bits - 1

    @classmethod
    def from_index(cls, idx):
        if idx < 0:
            raise ValueError("index must be nonnegative")
        length = (idx + 1).bit_length() - 1
        return cls(idx + 1 - (1 << length), length)


def pointer_index(p: TinyPointer) -> int:
    return p.index


@dataclass
class TableStats:
    allocations: int = 0
    frees: int = 0
    failures: int = 0
    sum_pointer_bits: int = 0
    pointer_bit_histogram: Dict[int, int] = field(default_factory=dict)

    @property
    def live(self):
        return self.allocations - self.failures - self.frees

    @property
    def mean_pointer_bits(self):
        ok = self.allocations - self.failures
        return self.sum_pointer_bits / ok if ok else 0.0

    @classmethod
    def from_arrays(cls, stats, hist):
        return cls(
            allocations=int(stats[ST_ALLOCS]),
            frees=int(stats[ST_FREES]),
            failures=int(stats[ST_FAILURES]),
            sum_pointer_bits=int(stats[ST_SUM_BITS]),
            pointer_bit_histogram={i: int(c) for i, c in enumerate(hist) if c},
        )

    def to_dict(self):
        return {
            "allocations": self.allocations,
            "frees": self.frees,
            "failures": self.failures,
            "live": self.live,
            "sum_pointer_bits": self.sum_pointer_bits,
            "pointer_bit_histogram": {str(k): v for k, v in sorted(self.pointer_bit_histogram.items())},
        }


def new_stats():
    return np.zeros(STATS_LEN, np.int64), np.zeros(HIST_LEN, np.int64)


def check_delta(delta):
    if not 0.0 < delta < 1.0:
        raise InvalidParams(f"delta must lie in (0, 1), got {delta}")


class DereferenceTable:
    """Base class for the numba-backed tables.

    Subclasses set ``self.state`` (a namedtuple of arrays and scalars) and the
    three kernels ``_alloc``, ``_deref`` and ``_free``.
    """

    n_slots: int

    def _entry(self, name):
        """Compiled entry point of kernel ``name`` for this table's state.

        Going through the numba dispatcher re-types the whole state tuple on
        every call; the entry point skips that, which matters for the
        Python-level adapters.
        """
        entries = self.__dict__.setdefault("_entries", {})
        fn = entries.get(name)
        if fn is None:
            fn = getattr(self, name)
            if isinstance(fn, Dispatcher):
                fn = fn.compile((typeof(self.state),) + _KERNEL_ARGS[name])
            entries[name] = fn
        return fn

    def allocate(self, key: int) -> Optional[TinyPointer]:
        bits, length = self._entry("_alloc")(self.state, np.uint64(key))
        if length < 0:
            return None
        return TinyPointer(int(bits), int(length))

    def dereference(self, key: int, p: TinyPointer) -> int:
        return int(self._entry("_deref")(self.state, np.uint64(key), np.uint64(p.bits), np.int64(p.length)))

    def free(self, key: int, p: TinyPointer) -> None:
        self._entry("_free")(self.state, np.uint64(key), np.uint64(p.bits), np.int64(p.length))

    @property
    def stats(self) -> TableStats:
        return TableStats.from_arrays(self.state.stats, self.state.hist)

    @property
    def live(self):
        return int(self.state.stats[ST_LIVE])

    def metadata_bits(self) -> int:
        raise NotImplementedError

    def snapshot(self):
        """Copy of every mutable array in the table (for purity checks)."""
        return _snapshot(self.state)

    def occupied_slots(self) -> np.ndarray:
        raise NotImplementedError


_KERNEL_ARGS = {
    "_alloc": (types.uint64,),
    "_deref": (types.uint64, types.uint64, types.int64),
    "_free": (types.uint64, types.uint64, types.int64),
}


def _snapshot(state):
    out = []
    for v in state:
        if isinstance(v, np.ndarray):
            out.append(v.copy())
        elif isinstance(v, tuple):
            out.extend(_snapshot(v))
    return out


def snapshots_equal(a, b):
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


class ShadowTable:
    """Debug companion that checks caller contracts and slot uniqueness.

    Wraps any dereference table; keeps ``key -> (pointer, slot)`` outside the
    table's space accounting and raises ``ContractViolation`` on misuse or on
    a duplicate live slot.
    """

    def __init__(self, table):
        self.table = table
        self.owned = {}
        self.slot_owner = {}

    def allocate(self, key):
        if key in self.owned:
            raise ContractViolation(f"key {key} is already present")
        p = self.table.allocate(key)
        if p is None:
            return None
        slot = self.table.dereference(key, p)
        if not 0 <= slot < self.table.n_slots:
            raise ContractViolation(f"slot {slot} out of range")
        if slot in self.slot_owner:
            raise ContractViolation(f"slot {slot} handed to {key} while owned by {self.slot_owner[slot]}")
        self.owned[key] = (p, slot)
        self.slot_owner[slot] = key
        return p

    def dereference(self, key, p):
        slot = self.table.dereference(key, p)
        if key in self.owned and self.owned[key][0] == p and self.owned[key][1] != slot:
            raise ContractViolation(f"slot of live key {key} moved")
        return slot

    def free(self, key, p):
        if key not in self.owned:
            raise ContractViolation(f"free of absent key {key}")
        if self.owned[key][0] != p:
            raise ContractViolation(f"free of {key} with a stale pointer")
        _, slot = self.owned.pop(key)
        del self.slot_owner[slot]
        self.table.free(key, p)

    def __getattr__(self, name):
        return getattr(self.table, name)
