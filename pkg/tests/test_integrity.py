from __future__ import annotations

import pytest

from criteria import attack_trial, equivalence_run
from oblivkv.config import small_config
from oblivkv.runner import run
from oblivkv.workload import WorkloadSpec


@pytest.mark.parametrize("kind", ["tamper", "replay", "withhold"])
@pytest.mark.parametrize("seed", range(5))
def test_attacks_detected(kind, seed):
    detected, fired = attack_trial(kind, seed)
    assert fired and detected


def test_honest_run_without_macs():
    cfg = small_config(integrity=False)
    r = run(cfg, WorkloadSpec("hotspot", 0, cfg.geometry.N, seed=3), epochs=3, sessions=6)
    assert r.ok
    ok, detail = equivalence_run(epochs=30, seed=8, integrity=False)
    assert ok, detail
