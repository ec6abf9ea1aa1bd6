"""Dynamic balls-into-bins: Single, d-left and Iceberg placement, plus a probe experiment.

Iceberg(d) keeps up to ``h + tau + 1`` level-one balls in the ball's home
bin ``g(x)``.  Past that cap, and while fewer than ``n/d`` level-two balls
exist, the ball goes d-left style (fewest level-two balls, ties to the
lowest group) into one of ``d`` groups of ``n/d`` bins.  Anything else
lands in bin 0 as a level-three ball.  Balls never move once placed.

A ball is ``tau``-exposed when the bin it lands in already held at least
``h + tau`` balls; the label sticks until the ball is deleted.
"""

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import ContractViolation, InvalidParams, TinyPointer
from .hashing import derive_seed, hash_stream, hash_stream_jit, hash_to_range, hash_to_range_jit
from .variable import WrappedVariableTable, wv_alloc, wv_free
from .workloads import OP_ALLOC, OP_FREE

SINGLE = 0
DLEFT = 1
ICEBERG = 2
RULES = {"single": SINGLE, "dleft": DLEFT, "iceberg": ICEBERG}

TAU_C = 2.0

LEVEL_ONE = 1
LEVEL_TWO = 2
LEVEL_THREE = 3

# simulate() result layout
B_MAX_LOAD = 0
B_Q_MAX = 1
B_LEVEL3 = 2
B_L1_MAX = 3
B_L2_MAX = 4
B_INSERTS = 5
B_DELETES = 6
B_MAX_LIVE = 7
B_LEN = 8


def tau_for(h, d):
    """``ceil(TAU_C * sqrt(h * log2(h d + 2)))``."""
    return math.ceil(TAU_C * math.sqrt(h * math.log2(h * d + 2)))


def phi_d(d):
    """Root in (1, 2) of ``x^d = x^(d-1) + ... + x + 1``."""
    if d < 2:
        raise ValueError("d must be >= 2")
    roots = np.roots([1.0] + [-1.0] * d)
    real = [r.real for r in roots if abs(r.imag) < 1e-9 and r.real > 1]
    return max(real)


def iceberg_curve(n, h, d, tau=None):
    """``h + tau + ceil(log2 log2 n / (d log2 phi_d))``: the max-load target without slack."""
    tau = tau_for(h, d) if tau is None else tau
    return h + tau + math.ceil(math.log2(math.log2(n)) / (d * math.log2(phi_d(d))))


def rounded_bins(n, d):
    return -(-n // d) * d


@njit(cache=True, nogil=True, inline="always")
def _dleft_choice(load, key, seed_h, d, group):
    best = -1
    best_load = 0
    for i in range(d):
        b = i * group + hash_stream_jit(seed_h, key, i, group)
        if best < 0 or load[b] < best_load:
            best = b
            best_load = load[b]
    return best


@njit(cache=True, nogil=True)
def simulate(kinds, ids, keys, n, h, d, rule, tau, seed_g, seed_h, taus):
    """Replay an alloc/free workload as ball inserts/deletes.

    Returns the result vector, the max-over-time and end-of-run exposed
    counts for each threshold in ``taus``, and the final per-bin loads.
    """
    group = n // d
    load = np.zeros(n, np.int64)
    l1 = np.zeros(n, np.int64)
    l2 = np.zeros(n, np.int64)
    nk = keys.shape[0]
    ball_bin = np.full(nk, -1, np.int64)
    ball_level = np.zeros(nk, np.int64)
    ball_pre = np.zeros(nk, np.int64)
    nt = taus.shape[0]
    exp_now = np.zeros(nt, np.int64)
    exp_max = np.zeros(nt, np.int64)
    res = np.zeros(B_LEN, np.int64)
    q = 0
    live = 0
    cap1 = h + tau
    for t in range(kinds.shape[0]):
        i = ids[t]
        key = keys[i]
        if kinds[t] == OP_ALLOC:
            if ball_bin[i] >= 0:
                continue
            level = LEVEL_ONE
            if rule == SINGLE:
                b = hash_to_range_jit(seed_g, key, n)
            elif rule == DLEFT:
                b = _dleft_choice(load, key, seed_h, d, group)
            else:
                b = hash_to_range_jit(seed_g, key, n)
                if l1[b] > cap1:
                    if q < group:
                        b = _dleft_choice(l2, key, seed_h, d, group)
                        level = LEVEL_TWO
                    else:
                        b = 0
                        level = LEVEL_THREE
            pre = load[b]
            ball_bin[i] = b
            ball_level[i] = level
            ball_pre[i] = pre
            load[b] += 1
            if level == LEVEL_ONE:
                l1[b] += 1
                if l1[b] > res[B_L1_MAX]:
                    res[B_L1_MAX] = l1[b]
            elif level == LEVEL_TWO:
                l2[b] += 1
                q += 1
                if l2[b] > res[B_L2_MAX]:
                    res[B_L2_MAX] = l2[b]
                if q > res[B_Q_MAX]:
                    res[B_Q_MAX] = q
            else:
                res[B_LEVEL3] += 1
            if load[b] > res[B_MAX_LOAD]:
                res[B_MAX_LOAD] = load[b]
            for k in range(nt):
                if pre >= h + taus[k]:
                    exp_now[k] += 1
                    if exp_now[k] > exp_max[k]:
                        exp_max[k] = exp_now[k]
            live += 1
            if live > res[B_MAX_LIVE]:
                res[B_MAX_LIVE] = live
            res[B_INSERTS] += 1
        elif kinds[t] == OP_FREE:
            b = ball_bin[i]
            if b < 0:
                continue
            load[b] -= 1
            if ball_level[i] == LEVEL_ONE:
                l1[b] -= 1
            elif ball_level[i] == LEVEL_TWO:
                l2[b] -= 1
                q -= 1
            for k in range(nt):
                if ball_pre[i] >= h + taus[k]:
                    exp_now[k] -= 1
            ball_bin[i] = -1
            live -= 1
            res[B_DELETES] += 1
    return res, exp_max, exp_now, load


@dataclass
class SimResult:
    rule: str
    n: int
    h: int
    d: int
    tau: int
    max_load: int
    q_max: int
    level3: int
    l1_max: int
    l2_max: int
    inserts: int
    deletes: int
    max_live: int
    taus: np.ndarray
    exposed_max: np.ndarray
    exposed_end: np.ndarray
    final_loads: np.ndarray

    @property
    def exposed(self):
        """End-of-run exposed count at this run's own ``tau``."""
        hits = np.nonzero(self.taus == self.tau)[0]
        return int(self.exposed_end[hits[0]]) if len(hits) else 0


def run_rule(rule, workload, n, h, d, seed, tau=None, taus=None):
    """Drive a ``workload`` (ops of dense ball ids) through one placement rule."""
    code = RULES[rule]
    if d < 1 or (code != SINGLE and d < 2):
        raise InvalidParams("d-left and iceberg need d >= 2")
    n = rounded_bins(n, d) if code != SINGLE else n
    tau = tau_for(h, d) if tau is None else tau
    taus = np.array([tau] if taus is None else list(taus), np.int64)
    res, exp_max, exp_end, loads = simulate(
        workload.kinds, workload.ids, workload.keys, np.int64(n), np.int64(h), np.int64(d),
        np.int64(code), np.int64(tau), np.uint64(derive_seed(seed, 0)),
        np.uint64(derive_seed(seed, 1)), taus,
    )
    r = [int(x) for x in res]
    return SimResult(rule, n, h, d, tau, r[B_MAX_LOAD], r[B_Q_MAX], r[B_LEVEL3], r[B_L1_MAX],
                     r[B_L2_MAX], r[B_INSERTS], r[B_DELETES], r[B_MAX_LIVE], taus, exp_max,
                     exp_end, loads)


class BinSystem:
    """Ball-at-a-time version of ``simulate`` with the same hashing and rules."""

    def __init__(self, n, h, d=2, rule="iceberg", seed=0, tau=None):
        if rule not in RULES:
            raise InvalidParams(f"unknown rule {rule!r}")
        if n < 1 or h < 1:
            raise InvalidParams("n and h must be >= 1")
        code = RULES[rule]
        if code != SINGLE and d < 2:
            raise InvalidParams("d-left and iceberg need d >= 2")
        self.rule = rule
        self.n = rounded_bins(n, d) if code != SINGLE else n
        self.h = h
        self.d = d
        self.group = self.n // d
        self.tau = tau_for(h, d) if tau is None else tau
        self.seed_g = derive_seed(seed, 0)
        self.seed_h = derive_seed(seed, 1)
        self.bins = [dict() for _ in range(self.n)]  # ball -> level
        self.l1 = [0] * self.n
        self.l2 = [0] * self.n
        self.balls = {}  # ball -> (bin, level, load before insert)
        self.q = 0

    @property
    def m(self):
        return self.h * self.n

    def _dleft(self, counts, x):
        best = None
        for i in range(self.d):
            b = i * self.group + hash_stream(self.seed_h, x, i, self.group)
            if best is None or counts[b] < counts[best]:
                best = b
        return best

    def home(self, x):
        return hash_to_range(self.seed_g, x, self.n)

    def insert(self, x):
        if x in self.balls:
            raise ContractViolation(f"ball {x} is already present")
        level = LEVEL_ONE
        if self.rule == "single":
            b = self.home(x)
        elif self.rule == "dleft":
            b = self._dleft([len(bin_) for bin_ in self.bins], x)
        else:
            b = self.home(x)
            if self.l1[b] > self.h + self.tau:
                if self.q < self.group:
                    b = self._dleft(self.l2, x)
                    level = LEVEL_TWO
                else:
                    b, level = 0, LEVEL_THREE
        self.balls[x] = (b, level, len(self.bins[b]))
        self.bins[b][x] = level
        if level == LEVEL_ONE:
            self.l1[b] += 1
            if self.rule == "iceberg" and self.l1[b] > self.h + self.tau + 1:
                raise AssertionError("level-one cap exceeded")
        elif level == LEVEL_TWO:
            self.l2[b] += 1
            self.q += 1
        return b, level

    def delete(self, x):
        if x not in self.balls:
            raise ContractViolation(f"ball {x} is not present")
        b, level, _ = self.balls.pop(x)
        del self.bins[b][x]
        if level == LEVEL_ONE:
            self.l1[b] -= 1
        elif level == LEVEL_TWO:
            self.l2[b] -= 1
            self.q -= 1
        return b

    def bin_of(self, x):
        return self.balls[x][0]

    def load(self, b):
        return len(self.bins[b])

    def max_load(self):
        return max((len(b) for b in self.bins), default=0)

    def exposed_count(self, tau):
        return sum(1 for _, _, pre in self.balls.values() if pre >= self.h + tau)

    def rescan_q(self):
        return sum(1 for bin_ in self.bins for level in bin_.values() if level == LEVEL_TWO)

    def level_counts(self):
        out = {LEVEL_ONE: 0, LEVEL_TWO: 0, LEVEL_THREE: 0}
        for _, level, _ in self.balls.values():
            out[level] += 1
        return out


# probe complexity of the wrapped variable table


@njit(cache=True, nogil=True)
def _probe_run(state, kinds, ids, keys, start, every, nsamples):
    nk = keys.shape[0]
    ptr_bits = np.zeros(nk, np.uint64)
    ptr_len = np.full(nk, -1, np.int64)
    failures = 0
    chunks = []
    for t in range(kinds.shape[0]):
        i = ids[t]
        if kinds[t] == OP_ALLOC:
            bits, length = wv_alloc(state, keys[i])
            if length < 0:
                failures += 1
            else:
                ptr_bits[i] = bits
                ptr_len[i] = length
        elif kinds[t] == OP_FREE and ptr_len[i] >= 0:
            wv_free(state, keys[i], ptr_bits[i], ptr_len[i])
            ptr_len[i] = -1
        if t >= start and (t - start + 1) % every == 0 and len(chunks) < nsamples:
            idx = np.nonzero(ptr_len >= 0)[0]
            vals = np.empty(idx.shape[0], np.float64)
            for j in range(idx.shape[0]):
                k = idx[j]
                vals[j] = float(np.uint64(1) << np.uint64(ptr_len[k])) + float(ptr_bits[k]) - 1.0
            chunks.append(vals)
    total = 0
    for c in chunks:
        total += c.shape[0]
    out = np.empty(total, np.float64)
    pos = 0
    for c in chunks:
        out[pos : pos + c.shape[0]] = c
        pos += c.shape[0]
    return out, failures


@dataclass
class ProbeStats:
    n: int
    delta: float
    mean: float
    p99: float
    max: float
    failures: int
    samples: int


def probe_index(p: TinyPointer) -> int:
    """Probe index of a ball placed via pointer ``p``: its position in bit-string order."""
    return p.index


def probe_experiment(n, delta, ops, seed=0, samples=8, workload="churn"):
    """Probe-index statistics of live balls in a wrapped table at load ``1 - delta``.

    Ball ``x`` with pointer ``p`` sits in bin ``Dereference(x, p)``, the
    ``index(p)``-th entry of its probe sequence.  The pointer index is sampled
    over all live balls at ``samples`` evenly spaced instants after the fill.
    """
    from .workloads import generate

    if not 0 < delta < 1:
        raise InvalidParams("delta must lie in (0, 1)")
    table = WrappedVariableTable(n, delta, seed=derive_seed(seed, 0))
    live = max(1, math.floor((1 - delta) * n))
    w = generate(workload, derive_seed(seed, 1), live, ops)
    every = max(1, ops // samples)
    vals, failures = _probe_run(table.state, w.kinds, w.ids, w.keys, np.int64(live),
                                np.int64(every), np.int64(samples))
    if len(vals) == 0:
        return ProbeStats(n, delta, float("nan"), float("nan"), float("nan"), failures, 0)
    return ProbeStats(n, delta, float(vals.mean()), float(np.percentile(vals, 99)),
                      float(vals.max()), failures, samples)
