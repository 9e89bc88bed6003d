"""Parallel vs sequential execution of one access batch under simulated latency.

    python3 benchmarks/bench_parallel.py [--latency-ms 5] [--accesses 64] [--workers 64]
"""
from __future__ import annotations

import argparse

from oblivkv.bench import parallel_vs_sequential, root_write_dedup


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--latency-ms", type=float, default=5.0)
    ap.add_argument("--accesses", type=int, default=64)
    ap.add_argument("--workers", type=int, default=64)
    ap.add_argument("--L", type=int, default=5)
    a = ap.parse_args()
    r = parallel_vs_sequential(a.accesses, a.latency_ms, a.L, a.workers)
    print(f"sequential: {r.sequential_s:.3f}s  ({r.sequential_ops:.1f} accesses/s)")
    print(f"parallel:   {r.parallel_s:.3f}s  ({r.parallel_ops:.1f} accesses/s)")
    print(f"speedup:    {r.speedup:.1f}x  storage reads={r.storage_reads} bucket writes={r.bucket_writes}")
    d = root_write_dedup()
    print(f"root writes per epoch: oracle {d.oracle_root_writes} ({d.evictions} evictions) -> deduplicated {d.parallel_root_writes}")


if __name__ == "__main__":
    main()
