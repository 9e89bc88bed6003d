from __future__ import annotations

import numpy as np
import pytest

from oblivkv.config import small_config
from oblivkv.runner import CrashPoint, CrashSchedule, deploy, run
from oblivkv.workload import Read, Workload, WorkloadSpec, Write

CFG = small_config()


def drain(program, value=None):
    gen = program()
    ops, send = [], None
    while True:
        try:
            op = gen.send(send)
        except StopIteration:
            return ops
        ops.append(op)
        send = value if isinstance(op, Read) else None


@pytest.mark.parametrize("kind", ["uniform", "zipfian", "smallbank", "hotspot"])
def test_programs_stay_in_range(kind):
    w = Workload(WorkloadSpec(kind, 10, 30, seed=1), stream=2)
    for _ in range(50):
        for op in drain(w.next_txn()):
            assert 10 <= op.key < 30
            if isinstance(op, Write):
                assert isinstance(op.value, bytes)


def test_zipfian_is_skewed():
    w = Workload(WorkloadSpec("zipfian", 0, 200, theta=0.99, seed=0))
    keys = np.array([w.key() for _ in range(5000)])
    assert np.bincount(keys).max() > 5 * 5000 / 200


def test_streams_are_deterministic():
    a = [drain(Workload(WorkloadSpec("hotspot", seed=4), 1).next_txn()) for _ in range(1)]
    b = [drain(Workload(WorkloadSpec("hotspot", seed=4), 1).next_txn()) for _ in range(1)]
    assert a == b


def test_schedule_parse_and_sweep():
    s = CrashSchedule.parse("2:5, 3:0:recover-read")
    assert s.points == [CrashPoint(2, 5), CrashPoint(3, 0, "recover-read")]
    assert len(CrashSchedule.sweep(3, 3)) == 3 * (3 * 3 + 2)
    assert len(CrashSchedule.sweep(1, 3, nested=True)) == 11 * 3


def test_run_report_ok():
    r = run(CFG, WorkloadSpec("smallbank", 0, CFG.geometry.N, seed=2), epochs=3, sessions=6)
    assert r.ok and r.epochs == 3 and r.committed > 0 and r.slot_reuse == 0
    assert "serializable: True" in r.to_text()
    assert r.to_dict()["ok"] is True


def test_run_with_crashes():
    r = run(CFG, WorkloadSpec("hotspot", 0, CFG.geometry.N, seed=5), epochs=4, sessions=6,
            crashes=CrashSchedule.parse("2:4,3:10:recover-read"))
    assert r.ok and r.crashes == 3 and len(r.recoveries) == 2
    assert all(x.replay_verbatim and x.committed_readable and x.no_crashed_writes for x in r.recoveries)


def test_bounded_txns_finish_early():
    r = run(CFG, WorkloadSpec("uniform", 0, CFG.geometry.N, seed=1), epochs=50, sessions=2, txns=3)
    assert r.txns == 6 and r.epochs < 50


def test_persistent_deployment_resumes(tmp_path):
    cfg = CFG
    dep = deploy(cfg, counter_path=tmp_path / "counter.json", storage_dir=tmp_path / "store")
    r1 = run(cfg, WorkloadSpec("uniform", 0, cfg.geometry.N, seed=1), epochs=2, sessions=4, dep=dep)
    assert r1.ok
    dep.server.close()
    dep2 = deploy(cfg, counter_path=tmp_path / "counter.json", storage_dir=tmp_path / "store", keys=dep.keys)
    r2 = run(cfg, WorkloadSpec("uniform", 0, cfg.geometry.N, seed=2), epochs=4, sessions=4, dep=dep2, resume=True)
    assert r2.ok and r2.epochs == 4
