"""Data structures built on dereference tables: a stable dictionary and relaxed retrieval."""

import math
from collections.abc import MutableMapping

import numpy as np

from .bitcodec import ChunkedPointerArray, ChunkOverflow
from .core import AllocationFailure, CapacityExceeded, ContractViolation, InvalidParams, TinyPointer
from .variable import WrappedVariableTable

INLINE_POINTERS_FROM = 64


class StableDict:
    """Fixed-capacity dictionary whose values never move while their key is present.

    Values sit in a store of ``ceil((1 + 1/v) m)`` slots handed out by a
    variable-size dereference table.  The inner mapping holds, per key, a
    cell of a pointer array where that key's tiny pointer lives, so the
    dictionary itself never stores slot numbers.  Any ``MutableMapping`` can
    serve as ``inner``.
    """

    def __init__(self, m, v, seed=0, inner=None):
        if m < 1:
            raise InvalidParams("capacity must be >= 1")
        if not 1 <= v <= 64:
            raise InvalidParams("value width must lie in [1, 64]")
        self.m = m
        self.v = v
        self.n_slots = math.ceil((1 + 1 / v) * m)
        self.delta = (self.n_slots - m) / self.n_slots
        self.table = WrappedVariableTable(self.n_slots, self.delta, seed)
        self.values = np.zeros(self.n_slots, np.uint64)
        self.inner = {} if inner is None else inner
        if not isinstance(self.inner, MutableMapping):
            raise TypeError("inner must be a MutableMapping")
        if v < INLINE_POINTERS_FROM:
            k_avg = self.table.primary_width + 1
            log_n = max(1, math.ceil(math.log2(self.n_slots)))
            self.pointers = ChunkedPointerArray(m, k_avg, log_n)
        else:
            self.pointers = [TinyPointer(0, 0)] * m
        self._free_cells = list(range(m - 1, -1, -1))
        self._live_bits = 0

    def __len__(self):
        return len(self.inner)

    def __contains__(self, key):
        return key in self.inner

    def _pointer(self, cell):
        return self.pointers[cell] if isinstance(self.pointers, list) else self.pointers.get(cell)

    def _store_pointer(self, cell, p):
        if isinstance(self.pointers, list):
            self.pointers[cell] = p
        else:
            self.pointers.set(cell, p)

    def insert(self, key, value):
        if key in self.inner:
            raise ContractViolation(f"key {key} is already present")
        if len(self.inner) >= self.m:
            raise CapacityExceeded(f"dictionary already holds {self.m} keys")
        if not 0 <= value < 1 << self.v:
            raise ValueError(f"value does not fit in {self.v} bits")
        p = self.table.allocate(key)
        if p is None:
            raise AllocationFailure(f"no slot for key {key}")
        cell = self._free_cells[-1]
        try:
            self._store_pointer(cell, p)
        except ChunkOverflow as exc:
            self.table.free(key, p)
            raise AllocationFailure(str(exc)) from exc
        self._free_cells.pop()
        self.inner[key] = cell
        self._live_bits += p.length
        slot = self.table.dereference(key, p)
        self.values[slot] = value
        return slot

    def get(self, key):
        """``(value, slot)`` for a present key."""
        if key not in self.inner:
            raise KeyError(key)
        slot = self.table.dereference(key, self._pointer(self.inner[key]))
        return int(self.values[slot]), slot

    def delete(self, key):
        if key not in self.inner:
            raise KeyError(key)
        cell = self.inner.pop(key)
        p = self._pointer(cell)
        self.values[self.table.dereference(key, p)] = 0
        self.table.free(key, p)
        self._store_pointer(cell, TinyPointer(0, 0))
        self._free_cells.append(cell)
        self._live_bits -= p.length

    def mean_pointer_bits(self):
        """Mean length of the tiny pointers currently stored."""
        return self._live_bits / len(self.inner) if self.inner else 0.0


def sd_insert(d: StableDict, key, value):
    return d.insert(key, value)


def sd_get(d: StableDict, key):
    return d.get(key)


def sd_delete(d: StableDict, key):
    d.delete(key)


class RelaxedRetrieval:
    """Retrieval where the caller keeps a short retriever per key.

    A variable-size dereference table over ``2n`` slots turns ``(x, r)``
    into a slot number unique among live keys; the value is looked up under
    that number in an ordinary dict.  Nothing is stored in the table's slots.
    Querying with a wrong ``(x, r)`` pair returns whatever sits at the slot
    it names, or 0.
    """

    def __init__(self, n, seed=0):
        if n < 1:
            raise InvalidParams("relaxed retrieval needs n >= 1")
        self.n = n
        self.table = WrappedVariableTable(2 * n, 0.5, seed)
        self.backing = {}

    def __len__(self):
        return len(self.backing)

    def insert(self, x, y):
        if len(self.backing) >= self.n:
            raise CapacityExceeded(f"already holding {self.n} keys")
        r = self.table.allocate(x)
        if r is None:
            raise AllocationFailure(f"no slot for key {x}")
        self.backing[self.table.dereference(x, r)] = y
        return r

    def slot(self, x, r):
        return self.table.dereference(x, r)

    def query(self, x, r):
        return self.backing.get(self.table.dereference(x, r), 0)

    def delete(self, x, r):
        self.backing.pop(self.table.dereference(x, r), None)
        self.table.free(x, r)


def rr_insert(rr: RelaxedRetrieval, x, y):
    return rr.insert(x, y)


def rr_query(rr: RelaxedRetrieval, x, r):
    return rr.query(x, r)


def rr_delete(rr: RelaxedRetrieval, x, r):
    rr.delete(x, r)
