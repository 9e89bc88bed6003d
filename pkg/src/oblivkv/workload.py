"""Deterministic transaction generators.

A transaction program is a generator yielding ``Read(key)`` (the runner sends
back the value, ``None`` for a never-written key) and ``Write(key, value)``.
Returning ends the program and the runner commits.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable, Generator, Union

import numpy as np


@dataclass(frozen=True)
class Read:
    key: int


@dataclass(frozen=True)
class Write:
    key: int
    value: bytes


Op = Union[Read, Write]
Program = Callable[[], Generator[Op, "bytes | None", None]]

KINDS = ("uniform", "zipfian", "smallbank", "hotspot")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "uniform"
    key_lo: int = 0
    key_hi: int = 500  # exclusive
    ops_per_txn: int = 4
    write_ratio: float = 0.5
    theta: float = 0.99  # zipfian skew
    hot_keys: int = 3  # hotspot: shared keys every txn touches with hot_prob
    hot_prob: float = 0.8
    seed: int = 0

    def validate(self) -> "WorkloadSpec":
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}; expected one of {KINDS}")
        if not 0 <= self.key_lo < self.key_hi:
            raise ValueError("empty key range")
        if self.kind == "smallbank" and self.key_hi - self.key_lo < 4:
            raise ValueError("smallbank needs at least two accounts")
        return self

    def to_mapping(self) -> dict:
        return asdict(self)


class Workload:
    def __init__(self, spec: WorkloadSpec, stream: int = 0):
        self.spec = spec.validate()
        self.rng = np.random.default_rng([spec.seed, stream])
        n = spec.key_hi - spec.key_lo
        self._n = n
        if spec.kind == "zipfian":
            w = 1.0 / np.arange(1, n + 1) ** spec.theta
            self._p = w / w.sum()
            self._perm = np.random.default_rng([spec.seed, 0xF00D]).permutation(n)
        self._serial = 0

    def key(self) -> int:
        s = self.spec
        if s.kind == "zipfian":
            return s.key_lo + int(self._perm[self.rng.choice(self._n, p=self._p)])
        if s.kind == "hotspot" and self.rng.random() < s.hot_prob:
            return s.key_lo + int(self.rng.integers(0, min(s.hot_keys, self._n)))
        return s.key_lo + int(self.rng.integers(0, self._n))

    def value(self, key: int) -> bytes:
        self._serial += 1
        return b"%d:%d:%d" % (self.spec.seed, key, self._serial)

    def next_txn(self) -> Program:
        if self.spec.kind == "smallbank":
            return self._smallbank()
        plan: list[Op] = []
        for _ in range(self.spec.ops_per_txn):
            k = self.key()
            plan.append(Write(k, self.value(k)) if self.rng.random() < self.spec.write_ratio else Read(k))

        def program():
            for op in plan:
                yield op

        return program

    # -- smallbank-like transfer mix -------------------------------------------------

    def _smallbank(self) -> Program:
        """Checking account of customer i is key lo+2i, savings lo+2i+1. Balances start at 100."""
        lo = self.spec.key_lo
        customers = self._n // 2
        a, b = (int(x) for x in self.rng.choice(customers, size=2, replace=False))
        amount = int(self.rng.integers(1, 20))
        kind = int(self.rng.integers(0, 5))
        chk = lambda c: lo + 2 * c  # noqa: E731
        sav = lambda c: lo + 2 * c + 1  # noqa: E731

        def bal(v: bytes | None) -> int:
            return 100 if v is None else int(v)

        def enc(x: int) -> bytes:
            return str(x).encode()

        def program():
            if kind == 0:  # balance
                yield Read(chk(a))
                yield Read(sav(a))
                yield Read(chk(b))
            elif kind == 1:  # deposit
                c = bal((yield Read(chk(a))))
                yield Read(sav(a))
                yield Write(chk(a), enc(c + amount))
            elif kind == 2:  # send payment
                x = bal((yield Read(chk(a))))
                y = bal((yield Read(chk(b))))
                yield Write(chk(a), enc(x - amount))
                yield Write(chk(b), enc(y + amount))
            elif kind == 3:  # transact savings
                s = bal((yield Read(sav(a))))
                yield Write(sav(a), enc(s + amount))
                yield Read(chk(a))
            else:  # amalgamate
                x = bal((yield Read(chk(a))))
                s = bal((yield Read(sav(a))))
                y = bal((yield Read(chk(b))))
                yield Write(chk(a), enc(0))
                yield Write(sav(a), enc(0))
                yield Write(chk(b), enc(x + s + y))

        return program


# -- scripted batching example ---------------------------------------------------------

EXAMPLE_KEYS = dict(a=0, b=1, c=2, d=3, e=4, f=5)


def run_batching_example(proxy) -> dict:
    """Drive the four-transaction batching example through one epoch.

    t1..t4 begin in order. First read batch: r1(a0), r2(d0), r3(e0). Then
    t1 writes a1 and c1, t3 reads d0 from the cache and a1 from t1's
    uncommitted version, t2's write to d hits t3's read marker and aborts,
    t1's read of b misses the cache and goes to the second batch, t3 writes
    c2, t4 writes f without reading and never finishes.
    """
    k = EXAMPLE_KEYS
    t1, t2, t3, t4 = (proxy.begin() for _ in range(4))
    names = {t1.ts: "t1", t2.ts: "t2", t3.ts: "t3", t4.ts: "t4"}
    f1, f2, f3 = proxy.read(t1, k["a"]), proxy.read(t2, k["d"]), proxy.read(t3, k["e"])
    proxy.step()
    observed = {"r1(a)": f1.result()[1], "r2(d)": f2.result()[1], "r3(e)": f3.result()[1]}
    proxy.write(t1, k["a"], b"a1")
    proxy.write(t1, k["c"], b"c1")
    observed["r3(d)"] = proxy.read(t3, k["d"]).result()[1]
    observed["r3(a)"] = proxy.read(t3, k["a"]).result()
    t2_abort = None
    try:
        proxy.write(t2, k["d"], b"d2")
    except Exception as exc:  # TxnAborted
        t2_abort = str(exc)
    fb = proxy.read(t1, k["b"])
    observed["r1(b) pending before batch 2"] = not fb.done()
    proxy.write(t3, k["c"], b"c2")
    proxy.write(t4, k["f"], b"f4")
    c3 = proxy.commit(t3)
    proxy.step()
    observed["r1(b)"] = fb.result()[1]
    c1 = proxy.commit(t1)
    outcome = proxy.run_epoch()
    batch = {b.key: b.value for b in outcome.write_batch if b is not None}
    return {
        "committed": sorted(names[t] for t in outcome.committed),
        "aborted": sorted(names[t] for t in outcome.aborted),
        "write_batch": {name: batch[key] for name, key in k.items() if key in batch},
        "commit_results": {"t1": c1.result(), "t3": c3.result()},
        "t2_abort": t2_abort,
        "observed": observed,
        "t1_ts": t1.ts,
    }


__all__ = ["Read", "Write", "Op", "Program", "WorkloadSpec", "Workload", "KINDS", "run_batching_example", "EXAMPLE_KEYS"]
