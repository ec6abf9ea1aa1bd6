"""Experiment drivers shared by the CLI and the acceptance tests.

Every driver takes an ``ExperimentConfig`` and returns a ``Report``: run
statistics plus named metrics checked against fixed thresholds.  Trials
use seeds derived from the master seed and the trial index, and run on a
thread pool capped by ``TINYPTR_THREADS`` (the kernels release the GIL).
Reports hold no timings, so a config always reproduces the same output.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from . import ballsbins
from .adapters import RelaxedRetrieval, StableDict
from .core import AllocationFailure, InvalidParams
from .fixed import FixedTable
from .hashing import derive_seed
from .lbt import LoadBalancingTable
from .variable import VariableTable, WrappedVariableTable
from .workloads import GENERATORS, OP_ALLOC, OP_FREE, generate, read_workload, replay

SCHEMA_VERSION = 1
COMMANDS = ("bench-fixed", "bench-variable", "stable-dict", "retrieval", "ballsbins", "probe")

# thresholds
FIXED_WIDTH_SLOPE = 2
FIXED_WIDTH_SLACK = 8
TRIAL_PASS_RATE = 0.99
LOAD_PASS_RATE = 0.95
SECONDARY_C = 1.0
LBT_FAIL_C = 4.0
VARIABLE_C = 6.0
TAIL_GAP = 8
TAIL_MAX = 1e-3
AGG_C = 12.0
AGG_GROUPS = 10_000
STABLE_A, STABLE_B = 4.0, 8.0
RETRIEVER_MAX = 8.0
ICEBERG_SLACK = 4
EXPOSED_POLY = 64
PROBE_SLOPE = 3.0


@dataclass
class Metric:
    name: str
    value: float
    threshold: float
    cmp: str = "<="

    @property
    def passed(self):
        v, t = self.value, self.threshold
        return {"<=": v <= t, "<": v < t, ">=": v >= t, "==": v == t}[self.cmp]

    def to_dict(self):
        return {"name": self.name, "value": self.value, "threshold": self.threshold,
                "cmp": self.cmp, "pass": bool(self.passed)}


@dataclass
class Report:
    command: str
    config: dict
    stats: dict = field(default_factory=dict)
    metrics: List[Metric] = field(default_factory=list)
    rows: List[dict] = field(default_factory=list)

    @property
    def passed(self):
        return all(m.passed for m in self.metrics)

    def metric(self, name):
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def to_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config,
            "stats": self.stats,
            "metrics": [m.to_dict() for m in self.metrics],
        }


@dataclass
class ExperimentConfig:
    command: str
    n: int = 1 << 16
    delta: float = 0.125
    h: int = 2
    d: int = 3
    ops: int = 1_000_000
    trials: int = 1
    seed: int = 0
    output: str = "json"
    workload: str = "churn"
    rule: str = "iceberg"
    v: int = 16
    table: Optional[str] = None
    deltas: Optional[List[float]] = None
    taus: Optional[List[int]] = None
    check: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise InvalidParams(f"unknown command {self.command!r}")
        if self.n < 1 or self.ops < 0 or self.trials < 1 or self.h < 1 or self.d < 1:
            raise InvalidParams("n, trials, h and d must be positive and ops nonnegative")
        if not 0 < self.delta < 1:
            raise InvalidParams("delta must lie in (0, 1)")
        if self.output not in ("json", "csv"):
            raise InvalidParams("output must be json or csv")
        if self.workload not in GENERATORS and not self.workload.startswith("file:"):
            raise InvalidParams(f"unknown workload {self.workload!r}")
        if self.rule not in ballsbins.RULES:
            raise InvalidParams(f"unknown rule {self.rule!r}")
        if not 0 <= self.seed < 1 << 64:
            raise InvalidParams("seed must be a 64-bit unsigned integer")
        return self

    def to_dict(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def thread_count():
    try:
        return max(1, int(os.environ.get("TINYPTR_THREADS", "1")))
    except ValueError:
        return 1


def run_trials(fn, trials):
    """``[fn(0), ..., fn(trials - 1)]``, possibly in parallel, in trial order."""
    workers = min(thread_count(), trials)
    if workers == 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(workers) as pool:
        return list(pool.map(fn, range(trials)))


def make_workload(workload, seed, live, ops):
    if workload.startswith("file:"):
        return read_workload(workload[5:])
    return generate(workload, seed, live, ops)


def _sum_hist(results):
    total = np.zeros_like(results[0].histogram)
    for r in results:
        total += r.histogram
    return total


def _replay_stats(results):
    hist = _sum_hist(results)
    ok = int(hist.sum())
    return {
        "trials": len(results),
        "allocations": sum(r.allocations for r in results),
        "failures": sum(r.failures for r in results),
        "frees": sum(r.frees for r in results),
        "violations": sum(r.violations for r in results),
        "mean_pointer_bits": float((hist * np.arange(len(hist))).sum() / ok) if ok else 0.0,
        "pointer_bit_histogram": {str(i): int(c) for i, c in enumerate(hist) if c},
    }


def fixed_width_bound(n, delta):
    return FIXED_WIDTH_SLOPE * (math.log2(math.log2(math.log2(n))) + math.log2(1 / delta)) + FIXED_WIDTH_SLACK


def bench_fixed(cfg):
    """Replay workloads on fixed tables (or, with ``table='lbt'``, a bare load-balancing table)."""
    n, delta = cfg.n, cfg.delta
    live = max(1, math.floor((1 - delta) * n))

    def trial(t):
        s = derive_seed(cfg.seed, t)
        table = (LoadBalancingTable(n, delta, derive_seed(s, 0)) if cfg.table == "lbt"
                 else FixedTable(n, delta, derive_seed(s, 0)))
        w = make_workload(cfg.workload, derive_seed(s, 1), live, cfg.ops)
        r = replay(table, w, check=cfg.check)
        r.ptr_bits = r.ptr_len = None
        return table if t == 0 else None, r

    out = run_trials(trial, cfg.trials)
    tables = [out[0][0]]
    results = [r for _, r in out]
    stats = _replay_stats(results)
    rep = Report("bench-fixed", cfg.to_dict(), stats)
    rate = lambda ok: sum(ok) / len(ok)
    if cfg.table == "lbt":
        cap = LBT_FAIL_C * delta * n
        stats.update(b=tables[0].b, max_failed_alive=max(r.max_failed_alive for r in results))
        rep.metrics.append(Metric("failed_alive_pass_rate",
                                  rate([r.max_failed_alive <= cap for r in results]), TRIAL_PASS_RATE, ">="))
    else:
        p_max = tables[0].p_max
        lengths = {int(i) for r in results for i in np.nonzero(r.histogram)[0]}
        stats.update(p_max=p_max, b_primary=tables[0].b_primary, b2=tables[0].b2,
                     max_secondary_live=max(r.max_metric for r in results),
                     metadata_bits_per_slot=tables[0].metadata_bits() / n)
        rep.metrics += [
            Metric("distinct_pointer_lengths", len(lengths), 1, "<="),
            Metric("p_max", p_max, fixed_width_bound(n, delta)),
            Metric("zero_failure_trial_rate", rate([r.failures == 0 for r in results]), TRIAL_PASS_RATE, ">="),
            Metric("secondary_bound_trial_rate",
                   rate([r.max_metric <= SECONDARY_C * delta**2 * n for r in results]), TRIAL_PASS_RATE, ">="),
        ]
    if cfg.check:
        rep.metrics.append(Metric("violations", stats["violations"], 0, "=="))
    return rep


def aggregate_groups(lengths, n, delta, groups, seed):
    """Totals of ``groups`` random groups of ``ceil(log2 n / max(1, log2 1/delta))`` pointer lengths."""
    g = math.ceil(math.log2(n) / max(1.0, math.log2(1 / delta)))
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(lengths), size=(groups, g))
    return g, lengths[picks].sum(axis=1)


def bench_variable(cfg):
    """Replay workloads on the wrapped variable table (``table='raw'``: a bare ``VariableTable``)."""
    n, delta = cfg.n, cfg.delta
    raw = cfg.table == "raw"
    live = max(1, math.floor((1 - delta) * n))

    def trial(t):
        s = derive_seed(cfg.seed, t)
        table = VariableTable(n, derive_seed(s, 0)) if raw else WrappedVariableTable(n, delta, derive_seed(s, 0))
        w = make_workload(cfg.workload, derive_seed(s, 1), live, cfg.ops)
        r = replay(table, w, check=cfg.check)
        r.ptr_len = r.ptr_len[r.ptr_len >= 0].astype(np.int8)
        r.ptr_bits = None
        ok = table.check_capacities() if raw else (
            not table.secondary_capacity or table.secondary_view().check_capacities())
        return table if t == 0 else None, r, ok

    out = run_trials(trial, cfg.trials)
    tables = [out[0][0]]
    results = [r for _, r, _ in out]
    capacities = all(ok for _, _, ok in out)
    stats = _replay_stats(results)
    rep = Report("bench-variable", cfg.to_dict(), stats)
    hist = _sum_hist(results)
    mean = stats["mean_pointer_bits"]
    scale = 1 + math.log2(1 / delta)
    long_tail = hist[int(math.ceil(mean + TAIL_GAP)):].sum() / max(1, hist.sum())
    stats.update(pointer_c=mean / scale, tail_fraction=float(long_tail), capacities_ok=capacities)
    rep.metrics += [
        Metric("mean_pointer_bits_over_scale", mean / scale, VARIABLE_C),
        Metric("tail_fraction", float(long_tail), TAIL_MAX, "<"),
        Metric("capacity_violations", 0 if capacities else 1, 0, "=="),
    ]
    live_lengths = np.concatenate([r.ptr_len.astype(np.int64) for r in results])
    if len(live_lengths):
        g, totals = aggregate_groups(live_lengths, n, delta, AGG_GROUPS, derive_seed(cfg.seed, 99))
        frac = float((totals <= AGG_C * math.log2(n)).mean())
        stats.update(group_size=g, group_total_max=int(totals.max()), group_total_mean=float(totals.mean()))
        rep.metrics.append(Metric("aggregate_group_pass_rate", frac, TRIAL_PASS_RATE, ">="))
    if not raw:
        stats.update(b_primary=tables[0].b_primary, primary_width=tables[0].primary_width,
                     secondary_capacity=tables[0].secondary_capacity,
                     max_secondary_live=max(r.max_metric for r in results))
    if cfg.check:
        rep.metrics.append(Metric("violations", stats["violations"], 0, "=="))
    return rep


def stable_dict_run(m, v, ops, seed, workload="churn", probe_every=16):
    """Churn a full ``StableDict``; returns ``(dict, stats)`` with slot-stability counts."""
    d = StableDict(m, v, derive_seed(seed, 0))
    w = make_workload(workload, derive_seed(seed, 1), m, ops)
    keys = w.keys
    mask = (1 << v) - 1
    slot_at = {}
    violations = failures = checks = 0
    bits_sum = bits_count = 0
    live_list, live_pos = [], {}
    for t, (kind, i) in enumerate(zip(w.kinds, w.ids)):
        key = int(keys[i])
        if kind == OP_ALLOC:
            try:
                slot_at[key] = d.insert(key, key & mask)
            except AllocationFailure:
                failures += 1
                continue
            live_pos[key] = len(live_list)
            live_list.append(key)
        elif kind == OP_FREE:
            if key not in slot_at:
                continue
            value, slot = d.get(key)
            checks += 1
            violations += slot != slot_at.pop(key) or value != key & mask
            d.delete(key)
            j = live_pos.pop(key)
            last = live_list.pop()
            if last != key:
                live_list[j] = last
                live_pos[last] = j
        if probe_every and t % probe_every == 0 and live_list:
            other = live_list[(t * 0x9E3779B1) % len(live_list)]
            value, slot = d.get(other)
            checks += 1
            violations += slot != slot_at[other] or value != other & mask
            bits_sum += d._live_bits
            bits_count += len(d)
    st = d.table.stats
    return d, {
        "ops": len(w),
        "checks": checks,
        "violations": violations,
        "failures": failures,
        "n_slots": d.n_slots,
        "mean_pointer_bits": st.mean_pointer_bits,
        "mean_stored_pointer_bits": bits_sum / bits_count if bits_count else 0.0,
    }


def stable_dict(cfg):
    d, stats = stable_dict_run(cfg.n, cfg.v, cfg.ops, cfg.seed, cfg.workload)
    rep = Report("stable-dict", cfg.to_dict(), stats)
    rep.metrics += [
        Metric("slot_violations", stats["violations"], 0, "=="),
        Metric("mean_stored_pointer_bits", stats["mean_stored_pointer_bits"],
               STABLE_A * math.log2(cfg.v) + STABLE_B),
        Metric("slot_count", d.n_slots, math.ceil((1 + 1 / cfg.v) * cfg.n), "=="),
    ]
    return rep


def retrieval_run(n, ops, seed, workload="churn"):
    """Fill a ``RelaxedRetrieval`` to ``n`` keys, churn ``ops`` steps, check every answer."""
    rr = RelaxedRetrieval(n, derive_seed(seed, 0))
    w = make_workload(workload, derive_seed(seed, 1), n, ops)
    keys = w.keys
    held = {}
    wrong = out_of_range = failures = 0
    bits_sum = count = 0
    for kind, i in zip(w.kinds, w.ids):
        x = int(keys[i])
        if kind == OP_ALLOC:
            y = x >> 7
            try:
                r = rr.insert(x, y)
            except AllocationFailure:
                failures += 1
                continue
            held[x] = r
            out_of_range += rr.slot(x, r) >= 2 * n
            bits_sum += r.length
            count += 1
        elif x in held:
            r = held.pop(x)
            wrong += rr.query(x, r) != x >> 7
            rr.delete(x, r)
    for x, r in held.items():
        wrong += rr.query(x, r) != x >> 7
        out_of_range += rr.slot(x, r) >= 2 * n
    return rr, {
        "inserts": count,
        "failures": failures,
        "wrong_answers": wrong,
        "slots_out_of_range": out_of_range,
        "mean_retriever_bits": bits_sum / count if count else 0.0,
    }


def retrieval(cfg):
    _, stats = retrieval_run(cfg.n, cfg.ops, cfg.seed, cfg.workload)
    rep = Report("retrieval", cfg.to_dict(), stats)
    rep.metrics += [
        Metric("wrong_answers", stats["wrong_answers"], 0, "=="),
        Metric("slots_out_of_range", stats["slots_out_of_range"], 0, "=="),
        Metric("mean_retriever_bits", stats["mean_retriever_bits"], RETRIEVER_MAX),
    ]
    return rep


def exposed_bound(h, tau):
    return EXPOSED_POLY * h**3 * math.exp(-(tau**2) / (3 * h))


def ballsbins_trials(rule, n, h, d, ops, trials, seed, workload="churn", taus=None):
    def trial(t):
        s = derive_seed(seed, t)
        nb = ballsbins.rounded_bins(n, d) if rule != "single" else n
        w = make_workload(workload, derive_seed(s, 1), h * nb, ops)
        return ballsbins.run_rule(rule, w, n, h, d, derive_seed(s, 0), taus=taus)

    return run_trials(trial, trials)


def ballsbins_cmd(cfg):
    taus = cfg.taus
    if taus is None and cfg.rule == "single":
        taus = list(range(2, 13))
    results = ballsbins_trials(cfg.rule, cfg.n, cfg.h, cfg.d, cfg.ops, cfg.trials, cfg.seed,
                               cfg.workload, taus)
    rep = Report("ballsbins", cfg.to_dict())
    for t, r in enumerate(results):
        rep.rows.append({"trial": t, "rule": r.rule, "n": r.n, "h": r.h, "d": r.d, "tau": r.tau,
                         "max_load": r.max_load, "exposed": r.exposed, "q_max": r.q_max,
                         "level3": r.level3})
    rep.stats = {
        "trials": len(results),
        "max_load_max": max(r.max_load for r in results),
        "max_load_mean": float(np.mean([r.max_load for r in results])),
        "level3_total": sum(r.level3 for r in results),
        "q_max": max(r.q_max for r in results),
    }
    rate = lambda ok: sum(ok) / len(ok)
    if cfg.rule == "iceberg":
        bound = ballsbins.iceberg_curve(results[0].n, cfg.h, cfg.d) + ICEBERG_SLACK
        rep.stats["max_load_bound"] = bound
        rep.metrics += [
            Metric("level3_free_trial_rate", rate([r.level3 == 0 for r in results]), TRIAL_PASS_RATE, ">="),
            Metric("max_load_trial_rate", rate([r.max_load <= bound for r in results]), LOAD_PASS_RATE, ">="),
            Metric("level_one_cap_excess", max(r.l1_max for r in results) - (cfg.h + results[0].tau + 1), 0),
        ]
    elif cfg.rule == "single" and taus:
        ok = [all(r.exposed_max[k] / r.n <= exposed_bound(cfg.h, int(tau)) for k, tau in enumerate(r.taus))
              for r in results]
        rep.stats["exposed_fraction_max"] = {
            str(int(tau)): max(float(r.exposed_max[k] / r.n) for r in results)
            for k, tau in enumerate(results[0].taus)
        }
        rep.metrics.append(Metric("exposed_envelope_trial_rate", rate(ok), LOAD_PASS_RATE, ">="))
    return rep


PROBE_DELTAS = [2.0**-k for k in range(1, 11)]


def probe_slope(stats):
    x = np.log2([1 / s.delta for s in stats])
    y = np.log2([s.mean for s in stats])
    return float(np.polyfit(x, y, 1)[0]) if len(stats) > 1 else 0.0


def probe(cfg):
    if cfg.workload.startswith("file:"):
        raise InvalidParams("probe generates its own workload per delta; file workloads are not supported")
    deltas = cfg.deltas or PROBE_DELTAS
    stats = [ballsbins.probe_experiment(cfg.n, dl, cfg.ops, derive_seed(cfg.seed, k), workload=cfg.workload)
             for k, dl in enumerate(deltas)]
    rep = Report("probe", cfg.to_dict())
    rep.stats = {"per_delta": [{"delta": s.delta, "mean": s.mean, "p99": s.p99, "max": s.max,
                                "failures": s.failures} for s in stats]}
    for s in stats:
        rep.rows.append({"n": s.n, "delta": s.delta, "mean": s.mean, "p99": s.p99, "max": s.max,
                         "failures": s.failures})
    if len(stats) > 1:
        slope = probe_slope(stats)
        rep.stats["loglog_slope"] = slope
        rep.metrics.append(Metric("loglog_slope", slope, PROBE_SLOPE))
    return rep


DRIVERS = {
    "bench-fixed": bench_fixed,
    "bench-variable": bench_variable,
    "stable-dict": stable_dict,
    "retrieval": retrieval,
    "ballsbins": ballsbins_cmd,
    "probe": probe,
}


def run(cfg):
    return DRIVERS[cfg.validate().command](cfg)
