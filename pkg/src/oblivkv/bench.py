"""Directional performance checks: parallel vs sequential execution, write dedup."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .config import Geometry
from .crypto import ProxyKeys, Sealer, SlotId
from .executor import BufferedPhysical, Executor, ParallelEpoch
from .oram import DirectPhysical, NullPhysical, RingOram, TreeMeta
from .storage import InProcessTransport, LatencyTransport, StorageClient, StorageServer


def _formatted(geom: Geometry, seed: int, delay: float):
    keys = ProxyKeys.generate(seed)
    sealer = Sealer(keys, geom.block_size)
    server = StorageServer()
    fast = StorageClient(InProcessTransport(server))
    items = [(b, 0, [sealer.seal(b"", SlotId(b, s, 0, 0)) for s in range(geom.slots)]) for b in range(geom.n_buckets)]
    fast.batch_write(0, items)
    client = StorageClient(LatencyTransport(InProcessTransport(server), delay)) if delay > 0 else fast
    return sealer, client


@dataclass
class ParallelBench:
    accesses: int
    latency_ms: float
    sequential_s: float
    parallel_s: float
    storage_reads: int
    bucket_writes: int

    @property
    def speedup(self) -> float:
        return self.sequential_s / self.parallel_s

    @property
    def sequential_ops(self) -> float:
        return self.accesses / self.sequential_s

    @property
    def parallel_ops(self) -> float:
        return self.accesses / self.parallel_s


def parallel_vs_sequential(accesses: int = 64, latency_ms: float = 5.0, L: int = 5, workers: int = 64,
                           seed: int = 11) -> ParallelBench:
    """One batch of ``accesses`` logical reads, then the write flush.

    The sequential side is the reference core issuing each physical operation
    as it happens; the parallel side simulates the batch, plans it and runs
    the plan on ``workers`` threads. Both see the same per-request latency.
    """
    geom = Geometry(L=L, Z=4, S=6, A=3, N=min(4 * (1 << L), Geometry(L=L).capacity), block_size=512)
    rng_keys = np.random.default_rng(seed)
    keys = rng_keys.integers(0, geom.N, size=accesses).tolist()

    sealer, client = _formatted(geom, seed, latency_ms / 1e3)
    meta = TreeMeta.fresh(geom, np.random.default_rng(seed))
    seq = RingOram(geom, DirectPhysical(meta, client, sealer, tag=1), np.random.default_rng(seed + 1), meta=meta)
    t0 = time.perf_counter()
    for k in keys:
        seq.access(int(k))
    sequential_s = time.perf_counter() - t0

    sealer, client = _formatted(geom, seed, latency_ms / 1e3)
    meta = TreeMeta.fresh(geom, np.random.default_rng(seed))
    phys = BufferedPhysical()
    core = RingOram(geom, phys, np.random.default_rng(seed + 1), meta=meta, trace=[])
    ex = Executor(client, sealer, meta, workers)
    par = ParallelEpoch(core, phys, ex)
    t0 = time.perf_counter()
    for k in keys:
        core.access(int(k))
    ops = par.plan()
    par.execute(ops)
    writes = par.flush(tag=1, stamp=core.evict_count)
    parallel_s = time.perf_counter() - t0
    ex.close()
    n_reads = sum(1 for o in ops if o.kind == "slot_read")
    return ParallelBench(accesses, latency_ms, sequential_s, parallel_s, n_reads, len(writes))


@dataclass
class DedupResult:
    evictions: int
    oracle_root_writes: int
    parallel_root_writes: int


def root_write_dedup(R: int = 8, b_read: int = 10, b_write: int = 1, L: int = 5, seed: int = 5) -> DedupResult:
    """Root-bucket writes of one epoch: sequential oracle vs deduplicated flush.

    With A=3 and 8*10+1 = 81 accesses the epoch performs 27 evictions.
    """
    geom = Geometry(L=L, Z=4, S=6, A=3, N=Geometry(L=L).capacity // 2, block_size=256)

    def drive(core: RingOram) -> None:
        rng = np.random.default_rng(seed)
        for _ in range(R * b_read):
            core.access(int(rng.integers(0, geom.N)))
        for _ in range(b_write):
            core.dummy_write()

    trace: list = []
    oracle = RingOram(geom, NullPhysical(), np.random.default_rng(seed), trace=trace)
    drive(oracle)
    oracle_root = sum(1 for op in trace if op.kind == "write" and op.bucket == 0)

    sealer, client = _formatted(geom, seed, 0.0)
    meta = TreeMeta.fresh(geom, np.random.default_rng(seed))
    phys = BufferedPhysical()
    core = RingOram(geom, phys, np.random.default_rng(seed), meta=meta, trace=[])
    ex = Executor(client, sealer, meta, 8)
    par = ParallelEpoch(core, phys, ex)
    drive(core)
    writes = par.flush(tag=1, stamp=core.evict_count)
    ex.close()
    return DedupResult(oracle.evictions, oracle_root, sum(1 for w in writes if w.bucket == 0))


__all__ = ["ParallelBench", "parallel_vs_sequential", "DedupResult", "root_write_dedup"]
