"""Acceptance batteries, shared by tests/test_acceptance.py and its script mode.

Every function returns a ``Result``; none of them asserts, so one failing
battery still lets the others report.
"""
from __future__ import annotations

import time
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from oblivkv.bench import parallel_vs_sequential, root_write_dedup
from oblivkv.config import Geometry, ProxyConfig, small_config
from oblivkv.crypto import ProxyKeys, Sealer, SlotId
from oblivkv.durability import CKPT_DELTA, CKPT_FULL, PATH_LOG
from oblivkv.errors import Crash, IntegrityError
from oblivkv.executor import BufferedPhysical, Executor, ParallelEpoch, resolve_payload
from oblivkv.observer import (
    Event, Trace, reads_since_write, slot_reuse_check, trace_equivalence, workload_independence_test,
)
from oblivkv.oram import Block, DirectPhysical, NullPhysical, RingOram, TreeMeta
from oblivkv.proxy import Proxy
from oblivkv.runner import CrashSchedule, deploy, run
from oblivkv.storage import InProcessTransport, StorageClient, StorageServer
from oblivkv.storage.malicious import Attack, MaliciousTransport
from oblivkv.workload import WorkloadSpec, run_batching_example


@dataclass
class Result:
    criterion: int
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"C{self.criterion} {'PASS' if self.passed else 'FAIL'} ({self.seconds:.1f}s): {self.detail}"


def _timed(criterion: int, fn, *a, **kw) -> Result:
    t0 = time.perf_counter()
    passed, detail = fn(*a, **kw)
    return Result(criterion, bool(passed), detail, time.perf_counter() - t0)


# -- C1 uniformity -----------------------------------------------------------------------


def uniformity_config(L: int, integrity: bool = True) -> ProxyConfig:
    cap = Geometry(L=L).capacity
    return ProxyConfig().with_(L=L, N=min(500, cap), block_size=512, workers=4, seed=100 + L, integrity=integrity)


def c1_uniformity(levels=(4, 5, 6, 7), integrity: bool = True) -> Result:
    def body():
        rows, ok = [], True
        for L in levels:
            cfg = uniformity_config(L, integrity)
            per_epoch = cfg.epoch.R * cfg.epoch.b_read
            epochs = -(-50 * (1 << L) // per_epoch)
            for kind in ("uniform", "zipfian"):
                spec = WorkloadSpec(kind, 0, cfg.geometry.N, theta=0.99, seed=L)
                r = run(cfg, spec, epochs=epochs, sessions=16)
                good = r.uniformity_conclusive and r.uniformity_p > 0.01 and r.ok
                ok &= good
                rows.append(f"L{L}/{kind[:4]} p={r.uniformity_p:.3f}")
        return ok, ", ".join(rows)
    return _timed(1, body)


# -- C2 workload independence ------------------------------------------------------------


def c2_independence(integrity: bool = True, L: int = 5, epochs: int = 20) -> Result:
    def body():
        cfg = uniformity_config(L, integrity)
        half = cfg.geometry.N // 2
        specs = [
            WorkloadSpec("uniform", 0, half, ops_per_txn=6, write_ratio=0.05, seed=1),
            WorkloadSpec("hotspot", half, cfg.geometry.N, ops_per_txn=3, write_ratio=0.95, seed=2),
        ]
        traces = []
        for i, spec in enumerate(specs):
            dep = deploy(cfg, keys=ProxyKeys.generate(1000 + i))
            rep = run(cfg, spec, epochs=epochs, sessions=12, dep=dep)
            if not rep.ok:
                return False, f"run {i} not ok"
            traces.append(dep.trace.events)
        v = workload_independence_test(traces[0], traces[1], L)
        detail = (f"structure_equal={v.structure_equal} leaf_p={v.leaf_test.p_value:.3f} "
                  f"(n={v.leaf_test.samples}) volume_p={v.volume_p:.3f}")
        if v.first_difference:
            detail += f" first_diff={v.first_difference}"
        return v.passed() and v.leaf_test.conclusive, detail
    return _timed(2, body)


# -- C3 sequential/parallel equivalence ---------------------------------------------------


def _formatted_storage(geom: Geometry, sealer: Sealer):
    server = StorageServer()
    trace = Trace()
    client = StorageClient(InProcessTransport(server), trace)
    items = [(b, 0, [sealer.seal(b"", SlotId(b, s, 0, 0)) for s in range(geom.slots)]) for b in range(geom.n_buckets)]
    client.batch_write(0, items)
    return server, client, trace


def plaintext_tree(server: StorageServer, meta: TreeMeta, sealer: Sealer, geom: Geometry) -> list[bytes]:
    """Decrypted contents of every slot at its current version."""
    raw = StorageClient(InProcessTransport(server))
    out = []
    for b in range(geom.n_buckets):
        v, tag = int(meta.version[b]), int(meta.wtag[b])
        for s in range(geom.slots):
            out.append(sealer.open(raw.read_slot(b, s, v), SlotId(b, s, v, tag)))
    return out


def equivalence_run(epochs: int = 100, seed: int = 3, integrity: bool = True,
                    geom: Geometry | None = None) -> tuple[bool, str]:
    """Reference core on direct storage vs the planned parallel executor."""
    geom = geom or Geometry(L=4, Z=4, S=6, A=3, N=40, block_size=256)
    sealer = Sealer(ProxyKeys.generate(seed), geom.block_size, integrity)
    srv_a, cl_a, _ = _formatted_storage(geom, sealer)
    srv_b, cl_b, tr_b = _formatted_storage(geom, sealer)
    meta = TreeMeta.fresh(geom, np.random.default_rng(seed))
    seq_trace: list = []
    a = RingOram(geom, None, np.random.default_rng(seed + 1), meta=meta.copy(), trace=seq_trace)
    a.physical = DirectPhysical(a.meta, cl_a, sealer)
    bp = BufferedPhysical()
    b = RingOram(geom, bp, np.random.default_rng(seed + 1), meta=meta.copy(), trace=[])
    ex = Executor(cl_b, sealer, b.meta, workers=8)
    par = ParallelEpoch(b, bp, ex)
    ops = np.random.default_rng(seed + 2)
    model: dict[int, Block] = {}
    bad: list[str] = []
    try:
        for e in range(epochs):
            mark = tr_b.mark()
            before = reads_since_write(seq_trace)
            start_versions = {x: int(b.meta.version[x]) for x in range(geom.n_buckets)}
            seq_start = len(seq_trace)
            for i in range(int(ops.integers(5, 60))):
                r = ops.random()
                k = int(ops.integers(0, geom.N))
                if r < 0.4:
                    blk = Block(k, e * 1000 + i, ops.bytes(int(ops.integers(0, 40))))
                    a.dummiless_write(k, blk)
                    b.dummiless_write(k, blk)
                    model[k] = blk
                elif r < 0.9:
                    ea, eb = a.access(k), b.access(k)
                    got_b = resolve_payload(eb.data if eb else None, par.step())
                    if (ea.data if ea else None) != got_b or got_b != model.get(k):
                        bad.append(f"epoch {e}: value mismatch on key {k}")
                else:
                    a.access(None)
                    b.access(None)
                    par.step()
            a.dummy_write()
            b.dummy_write()
            par.flush(tag=e + 1, stamp=b.evict_count)
            v = trace_equivalence(tr_b.since(mark), seq_trace[seq_start:], geom.slots, before, start_versions)
            if not v:
                bad.append(f"epoch {e}: missing={v.missing_reads[:2]} extra={v.extra_reads[:2]} w={v.write_diff[:2]}")
            if not a.meta.equals(b.meta, versions=False):
                bad.append(f"epoch {e}: metadata differs")
            a.check_path_invariant()
            b.check_path_invariant()
        if plaintext_tree(srv_a, a.meta, sealer, geom) != plaintext_tree(srv_b, b.meta, sealer, geom):
            bad.append("final plaintext trees differ")
        if a.stash.keys() != b.stash.keys():
            bad.append("final stashes differ")
    finally:
        ex.close()
    detail = (f"{epochs} epochs, {a.evictions} evictions, {a.reshuffles} early reshuffles, "
              f"{len(bad)} mismatches" + (f": {bad[:3]}" if bad else ""))
    return not bad and a.reshuffles > 0, detail


def c3_equivalence(integrity: bool = True) -> Result:
    return _timed(3, equivalence_run, integrity=integrity)


# -- C4 bucket invariant -------------------------------------------------------------------


def fuzz_slot_reuse(n_ops: int = 100_000, seed: int = 4) -> tuple[bool, str]:
    geom = Geometry(L=6, Z=4, S=6, A=3, N=200)
    trace: list = []
    core = RingOram(geom, NullPhysical(), np.random.default_rng(seed), trace=trace)
    rng = np.random.default_rng(seed + 1)
    kinds = rng.random(n_ops)
    keys = rng.integers(0, geom.N, n_ops)
    for r, k in zip(kinds, keys):
        if r < 0.6:
            core.access(int(k))
        elif r < 0.85:
            core.dummiless_write(int(k), Block(int(k), 1, b""))
        elif r < 0.95:
            core.dummy_write()
        else:
            core.access(None)
    core.check_path_invariant()
    events = [Event(i, 0, op.kind, op.bucket, op.slot) for i, op in enumerate(trace)]
    bad = slot_reuse_check(events)
    detail = (f"{n_ops} ops, {len(events)} physical ops, {core.evictions} evictions, "
              f"{core.reshuffles} early reshuffles, {len(bad)} violations")
    return not bad and core.evictions > 0 and core.reshuffles > 0, detail


def c4_bucket_invariant() -> Result:
    return _timed(4, fuzz_slot_reuse)


# -- C5 serializability ---------------------------------------------------------------------


def contended_runs(n: int = 1000, integrity: bool = True) -> tuple[bool, str]:
    cfg = small_config(workers=2, integrity=integrity)
    failures, txns, aborted = [], 0, 0
    for s in range(n):
        spec = WorkloadSpec("hotspot", 0, cfg.geometry.N, ops_per_txn=4, write_ratio=0.5,
                            hot_keys=3, hot_prob=0.8, seed=s)
        r = run(cfg.with_(seed=s), spec, epochs=2, sessions=8)
        txns += r.txns
        aborted += r.aborted
        if not (r.serializable and r.replay_equivalent and r.ok):
            failures.append((s, r.cycle[:3]))
    example = batching_example_outcome(integrity)
    example_ok = example["committed"] == ["t1", "t3"] and example["aborted"] == ["t2", "t4"]
    detail = (f"{n - len(failures)}/{n} runs acyclic and replay-equivalent ({txns} txns, {aborted} aborted); "
              f"scripted example committed={example['committed']} aborted={example['aborted']}")
    return not failures and example_ok, detail


def batching_example_outcome(integrity: bool = True) -> dict:
    cfg = small_config(integrity=integrity)
    dep = deploy(cfg)
    proxy = Proxy.create(cfg, dep.client, dep.keys, dep.counter, dep.trace)
    try:
        return run_batching_example(proxy)
    finally:
        proxy.close()


def c5_serializability(n: int = 1000, integrity: bool = True) -> Result:
    return _timed(5, contended_runs, n, integrity)


# -- C6 crash sweep ---------------------------------------------------------------------------


def crash_sweep(epochs: int = 3, integrity: bool = True) -> tuple[bool, str]:
    cfg = small_config(integrity=integrity)
    spec = WorkloadSpec("hotspot", 0, cfg.geometry.N, seed=1)
    digests: dict[tuple, dict] = defaultdict(dict)
    bad = []
    schedules = CrashSchedule.sweep(epochs, cfg.epoch.R, nested=True)
    for sch in schedules:
        cp = sch.points[0]
        rep = run(cfg, spec, epochs=epochs + 1, sessions=8, crashes=sch)
        expected_crashes = 2 if cp.nested else 1
        if not (rep.ok and rep.crashes == expected_crashes and rep.recoveries):
            bad.append((cp, "run", rep.crashes))
            continue
        first = rep.recoveries[0]
        if not (first.committed_readable and first.no_crashed_writes and first.replay_verbatim):
            bad.append((cp, "checks"))
        digests[(cp.epoch, cp.hook)][cp.nested] = first.state_digest
    diverged = [k for k, d in digests.items() if len(set(d.values())) != 1]
    detail = (f"{len(schedules) - len(bad)}/{len(schedules)} crash points ok "
              f"(3 epochs x {len(schedules) // (3 * epochs)} hooks x plain/nested); "
              f"nested recoveries diverging: {len(diverged)}")
    if bad:
        detail += f"; first failures {bad[:3]}"
    return not bad and not diverged, detail


def c6_crash_sweep(integrity: bool = True) -> Result:
    return _timed(6, crash_sweep, integrity=integrity)


# -- C7 integrity ------------------------------------------------------------------------------


def _crash_at(point: str, batch: int):
    def hook(p, e, j):
        if p == point and j == batch:
            raise Crash(p, e, j)
    return hook


def attack_trial(kind: str, seed: int, integrity: bool = True) -> tuple[bool, bool]:
    """(detected, attack fired). The run commits a few epochs, crashes mid-epoch and recovers."""
    cfg = small_config(seed=seed, integrity=integrity, workers=2)
    rng = np.random.default_rng(seed)
    target = "log_read" if kind == "withhold" else "read_slot"
    skip = int(rng.integers(0, 4 if target == "log_read" else 60))
    atk = Attack(kind, target, skip=skip, times=1, bit=int(rng.integers(0, 8 * 256)))
    dep = deploy(cfg, transport=MaliciousTransport(InProcessTransport(StorageServer()), [atk]))
    try:
        proxy = Proxy.create(cfg, dep.client, dep.keys, dep.counter, dep.trace)
        for e in range(3):
            t = proxy.begin()
            for _ in range(3):
                proxy.write(t, int(rng.integers(0, cfg.geometry.N)), b"v%d" % e)
            proxy.commit(t)
            proxy.run_epoch()
        proxy.crash_hook = _crash_at("read-batch-read", 2)
        try:
            proxy.run_epoch()
        except Crash:
            pass
        Proxy.recover(cfg, dep.client, dep.keys, dep.counter, dep.trace).close()
    except IntegrityError:
        return True, atk.fired > 0
    return False, atk.fired > 0


def c7_integrity(trials: int = 100) -> Result:
    def body():
        counts = {}
        for kind in ("tamper", "replay", "withhold"):
            res = [attack_trial(kind, s) for s in range(trials)]
            counts[kind] = (sum(d and f for d, f in res), sum(f for _, f in res))
        ok = all(d == trials for d, _ in counts.values())
        return ok, ", ".join(f"{k} detected {d}/{trials} (fired {f})" for k, (d, f) in counts.items())
    return _timed(7, body)


def c7_honest_without_macs(fast: bool = False) -> list[Result]:
    """Criteria 1-6 again with integrity disabled."""
    return [
        c1_uniformity(integrity=False) if not fast else c1_uniformity(levels=(4,), integrity=False),
        c2_independence(integrity=False),
        c3_equivalence(integrity=False),
        c4_bucket_invariant(),
        c5_serializability(n=50 if fast else 1000, integrity=False),
        c6_crash_sweep(integrity=False),
    ]


# -- C8 stash ----------------------------------------------------------------------------------


def stash_high_water(accesses: int = 100_000, seed: int = 0, cfg: ProxyConfig | None = None) -> tuple[int, int]:
    cfg = cfg or ProxyConfig()
    geom = cfg.geometry
    core = RingOram(geom, NullPhysical(), np.random.default_rng(1000 + seed))
    for k in range(geom.N):  # every key resident before the measured run
        core.access(k, Block(k, 1, b""))
    for k in np.random.default_rng(seed).integers(0, geom.N, accesses):
        core.access(int(k))
    return core.stash_high, cfg.stash_bound


def c8_stash() -> Result:
    def body():
        high, bound = stash_high_water()
        g = ProxyConfig().geometry
        return high < bound, f"L={g.L} Z={g.Z} S={g.S} A={g.A} N={g.N}: high-water {high} < bound {bound}"
    return _timed(8, body)


# -- C9 record sizes ----------------------------------------------------------------------------


def record_lengths(saturated: bool, epochs: int = 9) -> dict[int, set[int]]:
    cfg = small_config()
    dep = deploy(cfg)
    if saturated:
        spec = WorkloadSpec("uniform", 0, cfg.geometry.N, ops_per_txn=6, write_ratio=0.7, seed=9)
        run(cfg, spec, epochs=epochs, sessions=24, dep=dep)
    else:
        proxy = Proxy.create(cfg, dep.client, dep.keys, dep.counter, dep.trace)
        for _ in range(epochs):
            proxy.run_epoch()
        proxy.close()
    out: dict[int, set[int]] = defaultdict(set)
    for e in dep.trace.of_kind("log_append"):
        rtype, counter = e.counters
        if counter == 0:  # formatting checkpoint, written once
            continue
        out[rtype].add(e.length)
    return out


def c9_record_sizes() -> Result:
    def body():
        empty, full = record_lengths(False), record_lengths(True)
        names = {PATH_LOG: "path log", CKPT_FULL: "full ckpt", CKPT_DELTA: "delta ckpt"}
        ok = True
        parts = []
        for t, name in names.items():
            lengths = empty.get(t, set()) | full.get(t, set())
            ok &= len(lengths) == 1 and bool(empty.get(t)) and bool(full.get(t))
            parts.append(f"{name} {sorted(lengths)}")
        return ok, "empty vs saturated byte lengths: " + ", ".join(parts)
    return _timed(9, body)


# -- C10 performance ----------------------------------------------------------------------------


def c10_performance() -> Result:
    def body():
        b = parallel_vs_sequential(accesses=64, latency_ms=5.0)
        d = root_write_dedup()
        ok = b.speedup >= 5.0 and d.parallel_root_writes == 1 and d.oracle_root_writes == d.evictions
        return ok, (f"5 ms latency, batch 64: {b.sequential_ops:.1f} -> {b.parallel_ops:.1f} accesses/s "
                    f"({b.speedup:.1f}x); root writes {d.oracle_root_writes} ({d.evictions} evictions) -> "
                    f"{d.parallel_root_writes}")
    return _timed(10, body)
