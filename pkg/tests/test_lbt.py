import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from tinyptr import LoadBalancingTable, TinyPointer
from tinyptr.lbt import bucket_size
from tinyptr.workloads import generate, replay


def bucket_size_ref(m, delta):
    # exact rational evaluation of clamp(ceil(4 / delta^2 * max(1, log2 1/delta)), 8, m)
    inv = Fraction(1) / Fraction(delta)
    lg = max(Fraction(1), Fraction(math.log2(inv)))
    return max(8, min(math.ceil(4 * inv * inv * lg), m))


@pytest.mark.parametrize("m,delta,b,buckets", [
    (1 << 16, 0.25, 128, 512),
    (64, 0.9, 8, 8),
    (1 << 20, 1 / 16, 4096, 256),
])
def test_bucket_size_examples(m, delta, b, buckets):
    t = LoadBalancingTable(m, delta)
    assert t.b == b == bucket_size_ref(m, delta)
    assert t.num_buckets == buckets


@given(st.integers(8, 1 << 22), st.sampled_from([2.0**-k for k in range(1, 9)] + [0.3, 0.7, 0.9]))
def test_bucket_size_formula(m, delta):
    assert bucket_size(m, delta) == bucket_size_ref(m, delta)
    t = LoadBalancingTable(m, delta)
    assert t.num_buckets * t.b >= m >= 1


def test_first_allocation_is_slot_zero():
    t = LoadBalancingTable(1024, 0.5)
    p = t.allocate(42)
    assert p.bits == 0 and p.length == math.ceil(math.log2(t.b))
    assert t.dereference(42, p) == t.bucket_of(42) * t.b


def colliding_keys(t, count, bucket=0):
    out = []
    k = 0
    while len(out) < count:
        if t.bucket_of(k) == bucket:
            out.append(k)
        k += 1
    return out


def test_bucket_overflow_fails_exactly_once():
    t = LoadBalancingTable(1 << 12, 0.5, seed=11)
    keys = colliding_keys(t, t.b + 1, bucket=3)
    results = [t.allocate(k) for k in keys]
    assert sum(p is None for p in results) == 1
    assert results[-1] is None
    assert t.stats.failures == 1


def test_pointer_width_fixed():
    t = LoadBalancingTable(1 << 14, 0.2)
    r = replay(t, generate("churn", 0, int(0.8 * (1 << 14)), 50_000))
    assert set(np.nonzero(r.histogram)[0]) == {t.pointer_width}
    assert t.pointer_width == math.ceil(math.log2(t.b))


def test_dereference_arithmetic():
    t = LoadBalancingTable(1 << 12, 0.5)
    k0 = colliding_keys(t, 1, bucket=0)[0]
    assert t.dereference(k0, TinyPointer(3, t.pointer_width)) == 3
    for j in [1, 5, t.num_buckets - 1]:
        k = colliding_keys(t, 1, bucket=j)[0]
        for i in [0, 7, t.b - 1]:
            assert t.dereference(k, TinyPointer(i, t.pointer_width)) == j * t.b + i


def test_allocations_land_in_hashed_bucket():
    t = LoadBalancingTable(1 << 18, 0.25, seed=2)
    keys = np.random.default_rng(0).integers(0, 1 << 63, 100_000)
    for k in keys:
        p = t.allocate(int(k))
        if p is not None:
            assert t.dereference(int(k), p) // t.b == t.bucket_of(int(k))


def test_short_last_bucket_never_used():
    t = LoadBalancingTable(1000, 0.25)  # b=128, 8 buckets, 24 padding slots
    assert t.num_buckets * t.b == 1024
    r = replay(t, generate("churn", 1, 900, 20_000), check=True)
    assert r.violations == 0
    assert t.occupied_slots().max() < 1000
    last = colliding_keys(t, 1, bucket=t.num_buckets - 1)[0]
    assert t.dereference(last, TinyPointer(t.b - 1, t.pointer_width)) == 999


@given(st.integers(0, (1 << 64) - 1), st.integers(0, 64), st.integers(0, (1 << 64) - 1))
def test_malformed_pointer_in_range(key, length, raw):
    t = LoadBalancingTable(1000, 0.25)
    p = TinyPointer(raw & ((1 << length) - 1), length)
    assert 0 <= t.dereference(key, p) < 1000


def test_popcount_tracks_live():
    t = LoadBalancingTable(4096, 0.25, seed=4)
    rng = np.random.default_rng(1)
    held = {}
    for step in range(100_000):
        if held and (len(held) >= 3000 or rng.random() < 0.5):
            k = next(iter(held)) if step % 2 else list(held)[int(rng.integers(len(held)))]
            t.free(k, held.pop(k))
        else:
            k = int(rng.integers(0, 1 << 62))
            if k not in held:
                p = t.allocate(k)
                if p is not None:
                    held[k] = p
        if step % 97 == 0:
            assert t.occupancy_popcount() == t.live == len(held)
    for k, p in held.items():
        t.free(k, p)
    assert t.occupancy_popcount() == 0


def test_free_ignores_foreign_pointer():
    t = LoadBalancingTable(1024, 0.5)
    p = t.allocate(1)
    t.free(1, TinyPointer(p.bits, p.length + 1))
    t.free(1, TinyPointer((p.bits + 1) % t.b, p.length))
    assert t.live == 1


def test_large_bucket_hint_search():
    # single huge bucket: frees below the search hint must be found again
    t = LoadBalancingTable(20_000, 1 / 64)
    assert t.num_buckets == 1 and t.b == 20_000
    ps = [t.allocate(k) for k in range(20_000)]
    assert all(p is not None for p in ps)
    assert t.allocate(20_000) is None
    t.free(17, ps[17])
    t.free(5, ps[5])
    assert t.dereference(20_001, t.allocate(20_001)) == 5
    assert t.dereference(20_002, t.allocate(20_002)) == 17
    assert t.allocate(20_003) is None


def test_table_smaller_than_one_bucket():
    t = LoadBalancingTable(3, 0.5)
    assert t.num_buckets == 1 and t.b == 8
    ps = [t.allocate(k) for k in range(4)]
    assert [t.dereference(k, p) for k, p in zip(range(3), ps)] == [0, 1, 2]
    assert ps[3] is None
