"""Numba vs pure-numpy kernel timings.

    python3 benchmarks/bench_kernels.py [--L 10] [--events 200000]
"""
from __future__ import annotations

import argparse

from oblivkv.kernels.bench import benchmark


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--L", type=int, default=10)
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--reps", type=int, default=20)
    a = ap.parse_args()
    res = benchmark(L=a.L, n_events=a.events, reps=a.reps)
    names = list(res["numpy"])
    print(f"{'kernel':20s} {'numpy us':>12s} {'numba us':>12s} {'speedup':>8s}")
    for n in names:
        nb = res.get("numba", {}).get(n, float("nan"))
        sp = res.get("speedup", {}).get(n, float("nan"))
        print(f"{n:20s} {res['numpy'][n] * 1e6:12.1f} {nb * 1e6:12.1f} {sp:8.1f}")


if __name__ == "__main__":
    main()
