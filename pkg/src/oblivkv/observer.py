"""The adversary's view and the checks run against it.

A ``Trace`` is a thread-safe, append-only event sink. Storage clients record
one event per slot read, bucket write, log record, rollback or GC; the proxy
adds ``path`` events (leaf of every logical access), ``counter`` updates,
``notify`` (commit notifications leaving the proxy) and ``crash`` markers.
Timing is modelled by the logical ``tick`` the proxy sets before each batch.

Statistical verdicts are practical proxies for computational
indistinguishability, not proofs.
"""
from __future__ import annotations

import itertools
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import kernels

EXPORT_FIELDS = ("seq", "tick", "kind", "bucket", "slot", "length", "leaf", "version", "counters", "local")


@dataclass(frozen=True)
class Event:
    seq: int
    tick: int
    kind: str
    bucket: int = -1
    slot: int = -1
    length: int = -1
    leaf: int = -1
    version: int = -1
    counters: tuple[int, ...] = ()
    local: bool = False

    def to_line(self) -> str:
        vals = []
        for name in EXPORT_FIELDS:
            v = getattr(self, name)
            if name == "counters":
                v = ",".join(map(str, v))
            elif name == "local":
                v = int(v)
            vals.append(str(v))
        return "\t".join(vals)

    @classmethod
    def from_line(cls, line: str) -> "Event":
        parts = line.rstrip("\n").split("\t")
        if len(parts) != len(EXPORT_FIELDS):
            raise ValueError(f"expected {len(EXPORT_FIELDS)} fields, got {len(parts)}")
        raw = dict(zip(EXPORT_FIELDS, parts))
        return cls(
            seq=int(raw["seq"]), tick=int(raw["tick"]), kind=raw["kind"],
            bucket=int(raw["bucket"]), slot=int(raw["slot"]), length=int(raw["length"]),
            leaf=int(raw["leaf"]), version=int(raw["version"]),
            counters=tuple(int(x) for x in raw["counters"].split(",") if x),
            local=bool(int(raw["local"])),
        )


class Trace:
    def __init__(self) -> None:
        self._events: list[Event] = []
        self._lock = threading.Lock()
        self._seq = itertools.count()
        self.tick = 0

    def record(self, kind: str, **kw) -> None:
        with self._lock:
            self._events.append(Event(next(self._seq), self.tick, kind, **kw))

    @property
    def events(self) -> list[Event]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        return len(self._events)

    def since(self, seq: int) -> list[Event]:
        return [e for e in self.events if e.seq >= seq]

    def mark(self) -> int:
        with self._lock:
            return len(self._events) and self._events[-1].seq + 1

    def of_kind(self, *kinds: str) -> list[Event]:
        return [e for e in self.events if e.kind in kinds]

    def export(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("#" + "\t".join(EXPORT_FIELDS) + "\n")
            for e in self.events:
                fh.write(e.to_line() + "\n")

    @classmethod
    def load(cls, path) -> "Trace":
        t = cls()
        with open(path) as fh:
            for line in fh:
                if line.startswith("#") or not line.strip():
                    continue
                t._events.append(Event.from_line(line))
        if t._events:
            t._seq = itertools.count(t._events[-1].seq + 1)
        return t


# -- statistics ------------------------------------------------------------------


@dataclass(frozen=True)
class UniformityResult:
    statistic: float
    p_value: float
    samples: int
    conclusive: bool

    def passed(self, alpha: float = 0.01) -> bool:
        return self.conclusive and self.p_value > alpha


def path_leaves(events: Iterable[Event]) -> np.ndarray:
    return np.array([e.leaf for e in events if e.kind == "path"], dtype=np.int64)


def leaf_uniformity_test(events_or_leaves, L: int) -> UniformityResult:
    """Chi-square goodness of fit of path leaves against the uniform distribution."""
    leaves = _as_leaves(events_or_leaves)
    n_leaves = 1 << L
    counts = np.bincount(leaves, minlength=n_leaves)[:n_leaves]
    conclusive = len(leaves) >= 50 * n_leaves
    if len(leaves) == 0:
        return UniformityResult(float("nan"), float("nan"), 0, False)
    stat, p = stats.chisquare(counts)
    return UniformityResult(float(stat), float(p), len(leaves), conclusive)


def two_sample_leaf_test(a, b, L: int) -> UniformityResult:
    """Chi-square homogeneity test between two leaf samples."""
    la, lb = _as_leaves(a), _as_leaves(b)
    n_leaves = 1 << L
    table = np.vstack([np.bincount(la, minlength=n_leaves), np.bincount(lb, minlength=n_leaves)])
    table = table[:, table.sum(axis=0) > 0]
    stat, p, _, _ = stats.chi2_contingency(table)
    return UniformityResult(float(stat), float(p), len(la) + len(lb), min(len(la), len(lb)) >= 50 * n_leaves)


def _as_leaves(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.int64)
    x = list(x)
    if x and isinstance(x[0], Event):
        return path_leaves(x)
    return np.asarray(x, dtype=np.int64)


# -- bucket invariant -------------------------------------------------------------


def slot_reuse_check(events: Sequence[Event]) -> list[Event]:
    """Reads that hit a slot already read since the bucket's last write.

    A storage rollback starts a new segment: after it, buckets are back at
    older versions and recovery deliberately re-issues the logged reads
    (checked separately for being verbatim).
    """
    out: list[Event] = []
    seg: list[Event] = []
    for e in list(events) + [None]:
        if e is None or e.kind == "rollback":
            out += _reuse_segment(seg)
            seg = []
        elif e.kind in ("read", "write") and e.bucket >= 0 and not e.local:
            seg.append(e)
    return out


def _reuse_segment(rel: list[Event]) -> list[Event]:
    if not rel:
        return []
    buckets = np.fromiter((e.bucket for e in rel), dtype=np.int64, count=len(rel))
    slots = np.fromiter((max(e.slot, 0) for e in rel), dtype=np.int64, count=len(rel))
    is_write = np.fromiter((e.kind == "write" for e in rel), dtype=bool, count=len(rel))
    idx = kernels.slot_reuse_scan(buckets, slots, is_write, int(buckets.max()) + 1, int(slots.max()) + 1)
    return [rel[i] for i in idx.tolist()]


# -- sequential/parallel equivalence ----------------------------------------------


def reads_since_write(history: Iterable, n_slots: int | None = None) -> dict[int, set[int]]:
    """Per bucket, the slots read since its most recent write in ``history``.

    ``history`` holds objects with ``kind``, ``bucket`` and ``slot`` (SeqOps or
    Events). Replayed reads count like any other read.
    """
    out: dict[int, set[int]] = {}
    for op in history:
        if op.kind == "write":
            out[op.bucket] = set()
        elif op.kind == "read":
            out.setdefault(op.bucket, set()).add(op.slot)
    return out


@dataclass
class Expansion:
    reads: Counter
    writes: set[int]


def expand_sequential(epoch_ops: Iterable, n_slots: int, read_before: dict[int, set[int]]) -> Expansion:
    """Physical accesses a read/write-phase split must issue for one epoch.

    Reads of a bucket not yet rewritten this epoch go to storage. At the first
    rewrite of a bucket every slot still unread since its last pre-epoch write
    is read as well. Later reads of a rewritten bucket are local. Writes
    collapse to one per bucket.
    """
    reads: Counter = Counter()
    rewritten: set[int] = set()
    touched: dict[int, set[int]] = {}
    for op in epoch_ops:
        b = op.bucket
        if b in rewritten:
            continue
        if op.kind == "read":
            touched.setdefault(b, set()).add(op.slot)
            reads[(b, op.slot)] += 1
        elif op.kind == "write":
            seen = read_before.get(b, set()) | touched.get(b, set())
            for s in range(n_slots):
                if s not in seen:
                    reads[(b, s)] += 1
            rewritten.add(b)
    return Expansion(reads, rewritten)


@dataclass(frozen=True)
class EquivalenceVerdict:
    equal: bool
    missing_reads: tuple = ()
    extra_reads: tuple = ()
    write_diff: tuple = ()

    def __bool__(self) -> bool:
        return self.equal


def trace_equivalence(parallel_events: Sequence[Event], epoch_ops: Sequence, n_slots: int,
                      read_before: dict[int, set[int]], start_versions: dict[int, int] | None = None) -> EquivalenceVerdict:
    """Compare an observed parallel epoch against the expanded sequential one.

    With ``start_versions``, written bucket versions must equal start + 1.
    """
    exp = expand_sequential(epoch_ops, n_slots, read_before)
    got = Counter((e.bucket, e.slot) for e in parallel_events if e.kind == "read" and not e.local)
    wrote = [e for e in parallel_events if e.kind == "write"]
    missing = tuple(sorted((exp.reads - got).elements()))
    extra = tuple(sorted((got - exp.reads).elements()))
    wset = {e.bucket for e in wrote}
    wdiff = tuple(sorted(wset ^ exp.writes))
    if len(wrote) != len(wset):
        wdiff += ("duplicate-write",)
    if start_versions is not None:
        wdiff += tuple(("version", e.bucket) for e in wrote if e.version != start_versions.get(e.bucket, -2) + 1)
    return EquivalenceVerdict(not (missing or extra or wdiff), missing, extra, wdiff)


# -- workload independence --------------------------------------------------------

# Data-plane volumes (slot reads, bucket writes) depend on random path overlaps
# and are compared statistically; everything else must match exactly.
DATA_PLANE = ("read", "write")
CLIENT_FACING = ("notify", "crash")


def structural_projection(events: Sequence[Event]) -> list[tuple]:
    """Per tick: control-plane kind sequence and counts, and the set of payload lengths per kind."""
    by_tick: dict[int, list[Event]] = {}
    for e in events:
        if e.kind in CLIENT_FACING:
            continue
        by_tick.setdefault(e.tick, []).append(e)
    out = []
    for tick in sorted(by_tick):
        evs = by_tick[tick]
        control = [e for e in evs if e.kind not in DATA_PLANE]
        kinds = tuple(k for k, _ in itertools.groupby(e.kind for e in control))
        counts = tuple(sorted(Counter(e.kind for e in control).items()))
        lengths = tuple(sorted({(e.kind, e.length) for e in evs if e.kind != "path"}))
        out.append((tick, kinds, counts, lengths))
    return out


def data_plane_volumes(events: Sequence[Event]) -> dict[str, np.ndarray]:
    """Per-tick counts of storage reads and bucket writes."""
    ticks = sorted({e.tick for e in events if e.kind not in CLIENT_FACING})
    out = {}
    for kind in DATA_PLANE:
        c = Counter(e.tick for e in events if e.kind == kind)
        out[kind] = np.array([c.get(t, 0) for t in ticks], dtype=np.int64)
    return out


@dataclass(frozen=True)
class IndependenceVerdict:
    structure_equal: bool
    leaf_test: UniformityResult
    volume_p: float = 1.0
    first_difference: tuple | None = None

    def passed(self, alpha: float = 0.01) -> bool:
        return self.structure_equal and self.leaf_test.p_value > alpha and self.volume_p > alpha


def workload_independence_test(a: Sequence[Event], b: Sequence[Event], L: int) -> IndependenceVerdict:
    pa, pb = structural_projection(a), structural_projection(b)
    diff = None
    if pa != pb:
        for x, y in itertools.zip_longest(pa, pb):
            if x != y:
                diff = (x, y)
                break
    va, vb = data_plane_volumes(a), data_plane_volumes(b)
    ps = [stats.ks_2samp(va[k], vb[k]).pvalue for k in DATA_PLANE if len(va[k]) and len(vb[k])]
    return IndependenceVerdict(pa == pb, two_sample_leaf_test(a, b, L), float(min(ps, default=1.0)), diff)


__all__ = [
    "Event", "Trace", "EXPORT_FIELDS", "UniformityResult", "leaf_uniformity_test",
    "two_sample_leaf_test", "path_leaves", "slot_reuse_check", "reads_since_write",
    "expand_sequential", "trace_equivalence", "EquivalenceVerdict", "structural_projection",
    "workload_independence_test", "IndependenceVerdict", "data_plane_volumes",
]
