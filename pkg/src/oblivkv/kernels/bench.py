"""Times each kernel under both backends on representative inputs."""
from __future__ import annotations

import time

import numpy as np

from . import numba_impl, numpy_impl


def _inputs(L: int, Z: int, S: int, n_events: int, seed: int):
    rng = np.random.default_rng(seed)
    nb = (1 << (L + 1)) - 1
    slot_key = np.where(rng.random((nb, Z + S)) < 0.3, rng.integers(0, 1000, (nb, Z + S)), -1).astype(np.int64)
    valid = rng.random((nb, Z + S)) < 0.8
    leaves = rng.integers(0, 1 << L, 200).astype(np.int64)
    buckets = rng.integers(0, nb, n_events).astype(np.int64)
    slots = rng.integers(0, Z + S, n_events).astype(np.int64)
    is_write = rng.random(n_events) < 0.05
    return nb, slot_key, valid, leaves, buckets, slots, is_write, rng


def _time(fn, reps: int) -> float:
    fn()  # warm-up (numba compiles here)
    t0 = time.perf_counter()
    for _ in range(reps):
        fn()
    return (time.perf_counter() - t0) / reps


def benchmark(L: int = 10, Z: int = 4, S: int = 6, n_events: int = 200_000, reps: int = 20, seed: int = 0) -> dict:
    """Mean seconds per call for each kernel and backend, plus numpy/numba ratios."""
    nb, slot_key, valid, leaves, buckets, slots, is_write, rng = _inputs(L, Z, S, n_events, seed)
    path = numpy_impl.path_buckets(int(leaves[0]), L)
    u1 = rng.random(L + 1)
    uz = rng.random((L + 1, Z))
    out: dict[str, dict[str, float]] = {}
    backends = {"numpy": numpy_impl}
    if numba_impl is not None:
        backends["numba"] = numba_impl
    for name, k in backends.items():
        out[name] = {
            "select_path_slots": _time(lambda: k.select_path_slots(slot_key, valid, path, 5, u1), reps * 50),
            "read_phase_slots": _time(lambda: k.read_phase_slots(slot_key, valid, path, Z, uz), reps * 50),
            "evict_assign": _time(lambda: k.evict_assign(leaves, 3, L, Z), reps * 50),
            "slot_reuse_scan": _time(lambda: k.slot_reuse_scan(buckets, slots, is_write, nb, Z + S), reps),
        }
    if "numba" in out:
        out["speedup"] = {n: out["numpy"][n] / out["numba"][n] for n in out["numpy"]}
    return out


__all__ = ["benchmark"]
