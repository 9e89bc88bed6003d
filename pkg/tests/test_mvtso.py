from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from oblivkv.errors import TxnAborted
from oblivkv.mvtso import Mvtso, Status, make_ts, split_ts
from oblivkv.serializability import HistoryTxn, check


def ts(i):
    return make_ts(1, 0, i)


def test_ts_roundtrip_and_order():
    assert split_ts(make_ts(5, 3, 77)) == (5, 3, 77)
    assert make_ts(1, 9, 1000) < make_ts(2, 0, 0)


def test_reader_sees_latest_older_version():
    mv = Mvtso()
    t1, t2, t3 = (mv.register(ts(i)) for i in range(3))
    assert mv.write(t1, 0, b"a") == []
    assert mv.write(t3, 0, b"c") == []
    v = mv.read(t2, 0)
    assert v.writer_ts == t1.ts and v.value == b"a"
    assert t2.ts in t1.dependents


def test_late_writer_aborts_on_read_marker():
    mv = Mvtso()
    t1, t2 = mv.register(ts(0)), mv.register(ts(1))
    assert mv.read(t2, 0) is None  # base
    aborted = mv.write(t1, 0, b"late")
    assert aborted == [t1] and t1.status is Status.ABORTED


def test_cascading_abort():
    mv = Mvtso()
    t1, t2, t3 = (mv.register(ts(i)) for i in range(3))
    mv.write(t1, 0, b"x")
    mv.read(t2, 0)
    mv.write(t2, 1, b"y")
    mv.read(t3, 1)
    out = mv.abort(t1, "client")
    assert {t.ts for t in out} == {t1.ts, t2.ts, t3.ts}
    assert mv.chains[0].versions == [] and mv.chains[1].versions == []
    with pytest.raises(TxnAborted):
        mv.read(t3, 0)


def test_resolve_epoch_aborts_unfinished_and_their_readers():
    mv = Mvtso()
    t1, t2, t3 = (mv.register(ts(i)) for i in range(3))
    mv.write(t1, 0, b"x")
    mv.read(t2, 0)
    mv.complete(t2)
    mv.complete(t3)
    survivors, aborted = mv.resolve_epoch()
    assert [t.ts for t in survivors] == [t3.ts]
    assert {t.ts for t in aborted} == {t1.ts, t2.ts}


def test_timestamps_must_increase():
    mv = Mvtso()
    mv.register(ts(3))
    with pytest.raises(ValueError):
        mv.register(ts(2))


op = st.tuples(st.integers(0, 5), st.sampled_from(["r", "w", "c", "a"]), st.integers(0, 3))


@settings(max_examples=300, deadline=None)
@given(st.lists(op, max_size=60))
def test_survivors_read_their_serial_predecessor(ops):
    """Reference check: every read of a surviving txn returns the newest surviving
    write with a smaller timestamp, and the survivor history is serializable."""
    mv = Mvtso()
    txns = [mv.register(ts(i)) for i in range(6)]
    reads = {t.ts: [] for t in txns}
    for i, (ti, kind, key) in enumerate(ops):
        t = txns[ti]
        if t.status is not Status.ACTIVE:
            continue
        if kind == "r":
            v = mv.read(t, key)
            reads[t.ts].append((key, 0 if v is None else v.writer_ts))
        elif kind == "w":
            mv.write(t, key, b"%d" % i)
        elif kind == "c":
            mv.complete(t)
        else:
            mv.abort(t, "client")
    survivors, _ = mv.resolve_epoch()
    alive = {t.ts for t in survivors}
    for t in survivors:
        for key, w in reads[t.ts]:
            if w == t.ts:
                continue
            older = [s.ts for s in survivors if key in s.writes and s.ts < t.ts]
            assert w == (max(older) if older else 0)
            assert w == 0 or w in alive
    hist = [HistoryTxn(t.ts, tuple(reads[t.ts]), tuple(sorted(t.writes.items()))) for t in survivors]
    assert check(hist)
