from __future__ import annotations

import numpy as np

from oblivkv.observer import (
    Event, Trace, leaf_uniformity_test, slot_reuse_check, structural_projection, two_sample_leaf_test,
    workload_independence_test,
)


def ev(seq, kind, bucket=-1, slot=-1, tick=0, **kw):
    return Event(seq, tick, kind, bucket, slot, **kw)


def test_trace_export_roundtrip(tmp_path):
    t = Trace()
    t.record("read", bucket=1, slot=2, version=3, length=64)
    t.tick += 1
    t.record("log_append", counters=(1, 77), length=100)
    t.record("path", leaf=5, local=True)
    p = tmp_path / "t.tsv"
    t.export(p)
    assert Trace.load(p).events == t.events


def test_slot_reuse_detects_and_resets():
    events = [ev(0, "read", 0, 1), ev(1, "read", 0, 2), ev(2, "read", 0, 1), ev(3, "write", 0),
              ev(4, "read", 0, 1), ev(5, "rollback"), ev(6, "read", 0, 1)]
    bad = slot_reuse_check(events)
    assert [e.seq for e in bad] == [2]


def test_uniformity_needs_enough_samples():
    rng = np.random.default_rng(0)
    r = leaf_uniformity_test(rng.integers(0, 16, 799), 4)
    assert not r.conclusive and not r.passed()
    r = leaf_uniformity_test(rng.integers(0, 16, 5000), 4)
    assert r.conclusive and r.passed()


def test_uniformity_rejects_skew():
    rng = np.random.default_rng(1)
    leaves = np.where(rng.random(5000) < 0.2, 0, rng.integers(0, 16, 5000))
    assert not leaf_uniformity_test(leaves, 4).passed()
    assert two_sample_leaf_test(leaves, rng.integers(0, 16, 5000), 4).p_value < 0.01


def test_structural_projection_ignores_client_events():
    a = [ev(0, "path", leaf=1), ev(1, "notify"), ev(2, "log_append", length=9, counters=(1, 2))]
    b = [ev(0, "path", leaf=7), ev(2, "log_append", length=9, counters=(1, 3))]
    assert structural_projection(a) == structural_projection(b)
    c = [ev(0, "path", leaf=7), ev(2, "log_append", length=10, counters=(1, 3))]
    assert structural_projection(a) != structural_projection(c)


def test_independence_verdict_flags_structure():
    rng = np.random.default_rng(2)
    base = [ev(i, "path", leaf=int(rng.integers(0, 4)), tick=i // 10) for i in range(400)]
    other = [ev(i, "path", leaf=int(rng.integers(0, 4)), tick=i // 10) for i in range(400)]
    assert workload_independence_test(base, other, 2).passed()
    extra = other + [ev(500, "log_append", tick=3, length=5)]
    v = workload_independence_test(base, extra, 2)
    assert not v.structure_equal and v.first_difference is not None
