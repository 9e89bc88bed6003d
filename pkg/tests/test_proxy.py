from __future__ import annotations

from collections import Counter

import pytest

from oblivkv.config import small_config
from oblivkv.durability import PATH_LOG
from oblivkv.errors import ConfigError, Crash, OblivError, TxnAborted
from oblivkv.proxy import Proxy, epoch_hooks
from oblivkv.runner import deploy
from oblivkv.workload import run_batching_example

CFG = small_config()


def fresh(cfg=CFG, hook=None):
    dep = deploy(cfg)
    return dep, Proxy.create(cfg, dep.client, dep.keys, dep.counter, dep.trace, hook)


def write_and_commit(p, items):
    t = p.begin()
    for k, v in items.items():
        p.write(t, k, v)
    c = p.commit(t)
    p.run_epoch()
    return t, c


def read_all(p, keys):
    t = p.begin()
    futs = {k: p.read(t, k) for k in keys}
    while not all(f.done() for f in futs.values()):
        p.step()
    out = {k: f.result()[0] for k, f in futs.items()}
    p.commit(t)
    p.run_epoch()
    return out


def test_commit_then_read_back():
    dep, p = fresh()
    t, c = write_and_commit(p, {1: b"one", 2: b"two"})
    assert c.result() is True and p.status(t.ts) == "committed"
    assert read_all(p, [1, 2, 3]) == {1: b"one", 2: b"two", 3: None}
    assert p.debug_state()[1][0] == b"one"


def test_status_of_aborted_and_pending():
    dep, p = fresh()
    t1 = p.begin()
    p.write(t1, 1, b"x")
    assert p.status(t1.ts) == "pending"
    p.run_epoch()  # t1 never committed
    assert p.status(t1.ts) == "aborted"


def test_epoch_shape_is_fixed():
    dep, p = fresh()
    write_and_commit(p, {k: b"v" for k in range(8)})
    mark = dep.trace.mark()
    p.run_epoch()  # an idle epoch
    idle = dep.trace.since(mark)
    mark = dep.trace.mark()
    t = p.begin()
    for k in range(10):
        p.read(t, k)
        p.write(t, 20 + k % 4, b"w")
    p.commit(t)
    p.run_epoch()
    busy = dep.trace.since(mark)
    for evs in (idle, busy):
        assert sum(e.kind == "path" for e in evs) == CFG.epoch.R * CFG.epoch.b_read
        assert sum(e.kind == "log_append" and e.counters[0] == PATH_LOG for e in evs) == CFG.epoch.R
    shape = lambda evs: Counter(e.kind for e in evs if e.kind not in ("read", "write"))  # noqa: E731
    assert shape(idle) == shape(busy)


def test_value_limit_and_key_range():
    dep, p = fresh()
    t = p.begin()
    with pytest.raises(ConfigError):
        p.write(t, 1, b"x" * CFG.geometry.block_size)
    with pytest.raises(OblivError):
        p.read(t, CFG.geometry.N)


@pytest.mark.parametrize("hook", range(len(epoch_hooks(CFG.epoch.R))))
def test_crash_at_every_hook_keeps_committed_state(hook):
    name, batch = epoch_hooks(CFG.epoch.R)[hook]
    dep, p = fresh()
    write_and_commit(p, {1: b"keep", 2: b"keep2"})

    def crash(point, epoch, j):
        if point == name and j == batch and epoch == 2:
            raise Crash(point, epoch, j)

    p.crash_hook = crash
    t = p.begin()
    p.write(t, 1, b"lost?")
    c = p.commit(t)
    with pytest.raises(Crash):
        while True:
            p.step()
    with pytest.raises(OblivError):
        p.begin()
    q = Proxy.recover(CFG, dep.client, dep.keys, dep.counter, dep.trace)
    state = q.debug_state()
    # every hook fires before the counter records epoch 2, so the epoch is lost
    assert state[1][0] == b"keep"
    assert q.status(t.ts) == "aborted"
    with pytest.raises(TxnAborted):
        c.result()
    assert state[2][0] == b"keep2"
    write_and_commit(q, {3: b"after"})
    assert q.debug_state()[3][0] == b"after"


def test_recovery_replays_logged_paths_verbatim():
    dep, p = fresh()
    write_and_commit(p, {k: b"v" for k in range(6)})
    p.crash_hook = lambda pt, e, j: (_ for _ in ()).throw(Crash(pt, e, j)) if pt == "write-epoch" else None
    t = p.begin()
    for k in range(6):
        p.read(t, k)
    with pytest.raises(Crash):
        p.run_epoch()
    q = Proxy.recover(CFG, dep.client, dep.keys, dep.counter, dep.trace)
    rep = q.recovery
    assert rep.batches == CFG.epoch.R
    assert rep.replayed == [(b, s) for log in rep.logs for b, s, _ in log.reads]


def test_nested_crash_during_recovery():
    dep, p = fresh()
    write_and_commit(p, {5: b"five"})
    p.crash_hook = lambda pt, e, j: (_ for _ in ()).throw(Crash(pt, e, j)) if pt == "read-batch-read" and j == 1 else None
    with pytest.raises(Crash):
        p.run_epoch()
    with pytest.raises(Crash):
        Proxy.recover(CFG, dep.client, dep.keys, dep.counter, dep.trace,
                      lambda pt, e, j: (_ for _ in ()).throw(Crash(pt, e, j)) if pt == "recover-counter" else None)
    q = Proxy.recover(CFG, dep.client, dep.keys, dep.counter, dep.trace)
    assert q.debug_state() == {5: (b"five", q.debug_state()[5][1])}
    assert q.recovery.incarnation == 2


def test_batching_example_script():
    dep, p = fresh()
    out = run_batching_example(p)
    assert out["committed"] == ["t1", "t3"]
    assert out["aborted"] == ["t2", "t4"]
    assert out["write_batch"] == {"a": b"a1", "c": b"c2"}
    assert out["commit_results"] == {"t1": True, "t3": True}
    assert out["observed"]["r3(a)"] == (b"a1", out["t1_ts"])
    assert out["observed"]["r1(b) pending before batch 2"] is True
    assert out["t2_abort"]
