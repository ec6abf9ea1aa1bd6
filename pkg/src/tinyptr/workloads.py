"""Oblivious-adversary workloads: generation, text format and replay.

A workload is fixed before it runs.  Ops refer to keys by a dense id so
the replay kernels can keep per-key pointers in flat arrays; ``keys[id]`` is
the 64-bit key itself.  Generated keys are ``mix64(id + offset)``, a
bijection, so distinct ids never collide.

Text format, one op per line: ``A <key>``, ``F <key>``, ``D <key>``.
"""

from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from numba import njit, uint64

from .core import ContractViolation, HIST_LEN
from .hashing import hash_to_range_jit, mix64, stream_seed

OP_ALLOC = 0
OP_FREE = 1
OP_DEREF = 2
_KIND_CHARS = "AFD"

WorkloadOp = namedtuple("WorkloadOp", "kind key")

GENERATORS = ("churn", "fifo", "reinsert")


@dataclass
class Workload:
    kinds: np.ndarray  # uint8
    ids: np.ndarray  # int64
    keys: np.ndarray  # uint64, indexed by id
    live_target: int
    name: str = "custom"

    def __len__(self):
        return len(self.kinds)

    def ops(self):
        for k, i in zip(self.kinds, self.ids):
            yield WorkloadOp(_KIND_CHARS[k], int(self.keys[i]))


@njit(cache=True, nogil=True)
def _make_keys(seed, count):
    keys = np.empty(count, np.uint64)
    off = mix64(stream_seed(seed, 0x6B657973))
    for i in range(count):
        keys[i] = mix64(uint64(i) + off)
    return keys


@njit(cache=True, nogil=True)
def _gen_churn(seed, live, ops, fifo):
    total = live + ops
    kinds = np.empty(total, np.uint8)
    ids = np.empty(total, np.int64)
    present = np.empty(live + 1, np.int64)
    pick_seed = stream_seed(seed, 0x7069636B)
    t = 0
    for i in range(live):
        kinds[t] = OP_ALLOC
        ids[t] = i
        present[i] = i
        t += 1
    count = live
    head = 0  # fifo: present is a ring buffer of size live + 1
    next_id = live
    for step in range(ops):
        if step % 2 == 0 and count > 0:
            if fifo:
                victim = present[head]
                head = (head + 1) % (live + 1)
            else:
                j = hash_to_range_jit(pick_seed, uint64(step), uint64(count))
                victim = present[j]
                present[j] = present[count - 1]
            count -= 1
            kinds[t] = OP_FREE
            ids[t] = victim
        else:
            if fifo:
                present[(head + count) % (live + 1)] = next_id
            else:
                present[count] = next_id
            count += 1
            kinds[t] = OP_ALLOC
            ids[t] = next_id
            next_id += 1
        t += 1
    return kinds, ids, next_id


@njit(cache=True, nogil=True)
def _gen_reinsert(live, ops, universe):
    total = live + ops
    kinds = np.empty(total, np.uint8)
    ids = np.empty(total, np.int64)
    t = 0
    for i in range(live):
        kinds[t] = OP_ALLOC
        ids[t] = i
        t += 1
    oldest = 0
    newest = live - 1
    for step in range(ops):
        if step % 2 == 0:
            kinds[t] = OP_FREE
            ids[t] = oldest
            oldest = (oldest + 1) % universe
        else:
            newest = (newest + 1) % universe
            kinds[t] = OP_ALLOC
            ids[t] = newest
        t += 1
    return kinds, ids


def generate(kind, seed, live, ops):
    """Fill to ``live`` keys, then run ``ops`` alternating free/allocate steps.

    ``churn`` frees a uniformly random present key and allocates a fresh one;
    ``fifo`` frees the oldest present key; ``reinsert`` cycles a fixed key set
    of ``live + max(1, live // 8)`` keys in FIFO order, so every key is freed
    and re-allocated over and over.
    """
    if live < 1:
        raise ValueError("live target must be >= 1")
    s = np.uint64(seed)
    if kind in ("churn", "fifo"):
        kinds, ids, nkeys = _gen_churn(s, live, ops, kind == "fifo")
    elif kind == "reinsert":
        universe = live + max(1, live // 8)
        kinds, ids = _gen_reinsert(live, ops, universe)
        nkeys = universe
    else:
        raise ValueError(f"unknown workload generator {kind!r}")
    return Workload(kinds, ids, _make_keys(s, nkeys), live, kind)


def from_ops(ops, name="custom"):
    """Build a workload from ``WorkloadOp``s, validating the one-pointer-per-key discipline."""
    key_ids = {}
    present = set()
    kinds, ids = [], []
    live = peak = 0
    for lineno, op in enumerate(ops, 1):
        kind, key = op
        if kind not in _KIND_CHARS:
            raise ValueError(f"op {lineno}: unknown kind {kind!r}")
        if not 0 <= key < 1 << 64:
            raise ValueError(f"op {lineno}: key {key} is not a 64-bit unsigned integer")
        if kind == "A":
            if key in present:
                raise ContractViolation(f"op {lineno}: allocate of present key {key}")
            present.add(key)
            live += 1
            peak = max(peak, live)
        elif key not in present:
            raise ContractViolation(f"op {lineno}: {kind} of absent key {key}")
        elif kind == "F":
            present.discard(key)
            live -= 1
        kinds.append(_KIND_CHARS.index(kind))
        ids.append(key_ids.setdefault(key, len(key_ids)))
    keys = np.array(list(key_ids), dtype=np.uint64)
    return Workload(np.array(kinds, np.uint8), np.array(ids, np.int64), keys, peak, name)


def parse_workload(lines, name="file"):
    def ops():
        for lineno, line in enumerate(lines, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"line {lineno}: expected '<A|F|D> <key>', got {line!r}")
            yield WorkloadOp(parts[0], int(parts[1]))

    return from_ops(ops(), name)


def read_workload(path):
    with open(path) as fh:
        return parse_workload(fh, name=f"file:{path}")


def write_workload(workload, path_or_fh):
    lines = (f"{op.kind} {op.key}\n" for op in workload.ops())
    if hasattr(path_or_fh, "write"):
        path_or_fh.writelines(lines)
    else:
        with open(path_or_fh, "w") as fh:
            fh.writelines(lines)


# replay result layout
R_OPS = 0
R_ALLOCS = 1
R_FAILURES = 2
R_FREES = 3
R_SKIPPED_FREES = 4
R_MAX_FAILED_ALIVE = 5
R_VIOLATIONS = 6
R_MAX_METRIC = 7
R_DEREFS = 8
R_MAX_LIVE = 9
R_LEN = 10

_ABSENT = -1
_FAILED = -2


def make_replayer(alloc, deref, free, metric):
    """Compile a replay loop for one table type.

    With ``check`` set the loop also keeps a slot-owner shadow array and
    counts duplicate live slots, out-of-range slots and moved slots.
    """

    @njit(nogil=True)
    def replay(state, kinds, ids, keys, n_slots, check):
        res = np.zeros(R_LEN, np.int64)
        hist = np.zeros(HIST_LEN, np.int64)
        nkeys = keys.shape[0]
        ptr_bits = np.zeros(nkeys, np.uint64)
        ptr_len = np.full(nkeys, _ABSENT, np.int64)
        slot_of = np.full(nkeys if check else 1, -1, np.int64)
        owner = np.full(n_slots if check else 1, -1, np.int64)
        failed_alive = 0
        live = 0
        for t in range(kinds.shape[0]):
            kind = kinds[t]
            i = ids[t]
            key = keys[i]
            if kind == OP_ALLOC:
                if ptr_len[i] != _ABSENT:
                    res[R_VIOLATIONS] += 1
                    continue
                res[R_ALLOCS] += 1
                bits, length = alloc(state, key)
                if length < 0:
                    res[R_FAILURES] += 1
                    ptr_len[i] = _FAILED
                    failed_alive += 1
                    if failed_alive > res[R_MAX_FAILED_ALIVE]:
                        res[R_MAX_FAILED_ALIVE] = failed_alive
                else:
                    ptr_bits[i] = bits
                    ptr_len[i] = length
                    hist[length] += 1
                    live += 1
                    if live > res[R_MAX_LIVE]:
                        res[R_MAX_LIVE] = live
                    if check:
                        slot = deref(state, key, bits, length)
                        if slot < 0 or slot >= n_slots or owner[slot] >= 0:
                            res[R_VIOLATIONS] += 1
                        else:
                            owner[slot] = i
                            slot_of[i] = slot
                m = metric(state)
                if m > res[R_MAX_METRIC]:
                    res[R_MAX_METRIC] = m
            elif kind == OP_FREE:
                if ptr_len[i] == _FAILED:
                    # the allocation failed, so this free never happens
                    ptr_len[i] = _ABSENT
                    failed_alive -= 1
                    res[R_SKIPPED_FREES] += 1
                    continue
                if ptr_len[i] == _ABSENT:
                    res[R_VIOLATIONS] += 1
                    continue
                if check:
                    slot = deref(state, key, ptr_bits[i], ptr_len[i])
                    if slot != slot_of[i]:
                        res[R_VIOLATIONS] += 1
                    elif slot >= 0:
                        owner[slot] = -1
                    slot_of[i] = -1
                free(state, key, ptr_bits[i], ptr_len[i])
                ptr_len[i] = _ABSENT
                live -= 1
                res[R_FREES] += 1
            else:
                if ptr_len[i] < 0:
                    continue
                slot = deref(state, key, ptr_bits[i], ptr_len[i])
                res[R_DEREFS] += 1
                if check and slot != slot_of[i]:
                    res[R_VIOLATIONS] += 1
            res[R_OPS] += 1
        return res, hist, ptr_bits, ptr_len

    return replay


@dataclass
class ReplayResult:
    ops: int
    allocations: int
    failures: int
    frees: int
    skipped_frees: int
    max_failed_alive: int
    violations: int
    max_metric: int
    derefs: int
    max_live: int
    histogram: np.ndarray
    ptr_bits: np.ndarray
    ptr_len: np.ndarray

    @property
    def successes(self):
        return self.allocations - self.failures

    @property
    def mean_pointer_bits(self):
        n = int(self.histogram.sum())
        return float((self.histogram * np.arange(len(self.histogram))).sum() / n) if n else 0.0

    def live_ids(self):
        return np.nonzero(self.ptr_len >= 0)[0]

    def pointer_lengths(self):
        """Distinct lengths that occurred, one entry per successful allocation."""
        return np.repeat(np.arange(len(self.histogram)), self.histogram)


def replay(table, workload, check=False):
    """Run ``workload`` against ``table`` inside its compiled replay loop."""
    res, hist, ptr_bits, ptr_len = table._replay(
        table.state, workload.kinds, workload.ids, workload.keys, np.int64(table.n_slots), check
    )
    return ReplayResult(*(int(x) for x in res), hist, ptr_bits, ptr_len)
