"""Read-phase/write-phase execution of an epoch's physical operations.

The sequential core runs against ``BufferedPhysical``, which serves reads of
buckets already rewritten this epoch from the local buffer and hands out
``SlotRef`` placeholders for everything else. ``EpochPlanner`` turns the
core's ``SeqOp`` trace into a dependency graph of storage reads, and
``Executor`` runs that graph on a thread pool and flushes one write per
rewritten bucket when the epoch ends.
"""
from __future__ import annotations

import itertools
from concurrent.futures import FIRST_COMPLETED, Future, ThreadPoolExecutor, wait
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .crypto import Sealer, SlotId
from .oram import Block, Payload, SeqOp, SlotRef, StashEntry, TreeMeta, block_plaintext


@dataclass(frozen=True)
class PhysicalOp:
    id: int
    kind: str  # slot_read | bucket_write | metadata_update
    bucket: int
    slot: int = -1
    payload: Any = None
    depends_on: frozenset[int] = frozenset()
    reason: str = ""


@dataclass
class EpochPlan:
    read_ops: list[PhysicalOp]
    write_ops: list[PhysicalOp]

    def reads(self) -> list[tuple[int, int]]:
        return [(o.bucket, o.slot) for o in self.read_ops if o.kind == "slot_read"]


class EpochPlanner:
    """Incremental planner. ``valid_at_start`` is the valid bitmap when the epoch began."""

    def __init__(self, valid_at_start: np.ndarray):
        self.valid_at_start = valid_at_start
        self._ids = itertools.count()
        self.rewritten: set[int] = set()
        self.read: dict[int, set[int]] = {}
        self._last_meta: dict[int, int] = {}
        self._write_order: dict[int, None] = {}
        self.storage_reads = 0
        self.writes_seen = 0

    def _slot_read(self, b: int, s: int, reason: str) -> list[PhysicalOp]:
        seen = self.read.setdefault(b, set())
        assert s not in seen, f"bucket invariant: slot ({b}, {s}) read twice before rewrite"
        seen.add(s)
        prev = self._last_meta.get(b)
        meta = PhysicalOp(next(self._ids), "metadata_update", b,
                          depends_on=frozenset() if prev is None else frozenset((prev,)))
        self._last_meta[b] = meta.id
        self.storage_reads += 1
        return [meta, PhysicalOp(next(self._ids), "slot_read", b, s, depends_on=frozenset((meta.id,)), reason=reason)]

    def feed(self, ops: Iterable[SeqOp]) -> list[PhysicalOp]:
        out: list[PhysicalOp] = []
        for op in ops:
            b = op.bucket
            if op.kind == "read":
                if b not in self.rewritten:
                    out += self._slot_read(b, op.slot, op.reason)
            elif op.kind == "write":
                self.writes_seen += 1
                if b not in self.rewritten:
                    seen = self.read.get(b, set())
                    for s in np.flatnonzero(self.valid_at_start[b]).tolist():
                        if s not in seen:
                            out += self._slot_read(b, s, "expand")
                    self.rewritten.add(b)
                self._write_order.pop(b, None)
                self._write_order[b] = None
        return out

    def finish(self, contents: Callable[[int], Any] | None = None) -> list[PhysicalOp]:
        ops = []
        for b in self._write_order:
            prev = self._last_meta.get(b)
            ops.append(PhysicalOp(next(self._ids), "bucket_write", b,
                                  payload=None if contents is None else contents(b),
                                  depends_on=frozenset() if prev is None else frozenset((prev,))))
        return ops


def plan_epoch(trace: Sequence[SeqOp], valid_at_start: np.ndarray) -> EpochPlan:
    """Pure planning function over an epoch's sequential trace."""
    p = EpochPlanner(valid_at_start)
    reads = p.feed(trace)
    return EpochPlan(reads, p.finish())


def run_dag(ops: Sequence[PhysicalOp], fn: Callable[[PhysicalOp], Any], pool: ThreadPoolExecutor | None) -> dict[int, Any]:
    """Run ``fn`` over a DAG of ops (dependencies listed before dependents).

    Metadata ops run inline on the coordinating thread; everything else is
    submitted to ``pool`` as soon as its dependencies finish.
    """
    results: dict[int, Any] = {}
    if pool is None:
        for op in ops:
            results[op.id] = fn(op)
        return results
    ids = {op.id for op in ops}
    children: dict[int, list[PhysicalOp]] = {}
    pending: dict[int, int] = {}
    ready: list[PhysicalOp] = []
    for op in ops:
        live = [d for d in op.depends_on if d in ids]  # deps from earlier segments already ran
        pending[op.id] = len(live)
        for d in live:
            children.setdefault(d, []).append(op)
        if not live:
            ready.append(op)
    running: dict[Future, PhysicalOp] = {}

    def finish(op: PhysicalOp, value: Any) -> None:
        results[op.id] = value
        for c in children.get(op.id, ()):
            pending[c.id] -= 1
            if pending[c.id] == 0:
                ready.append(c)

    try:
        while ready or running:
            while ready:
                op = ready.pop()
                if op.kind == "metadata_update":
                    finish(op, fn(op))
                else:
                    running[pool.submit(fn, op)] = op
            if running:
                done, _ = wait(running, return_when=FIRST_COMPLETED)
                for f in done:
                    finish(running.pop(f), f.result())
    finally:
        for f in running:
            f.cancel()
    return results


class Executor:
    """Executes planned reads and the final write flush against storage."""

    def __init__(self, client, sealer: Sealer, meta: TreeMeta, workers: int = 1):
        self.client = client
        self.sealer = sealer
        self.meta = meta
        self.workers = max(1, workers)
        self._pool = ThreadPoolExecutor(self.workers, thread_name_prefix="oram-io") if self.workers > 1 else None

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=False, cancel_futures=True)
            self._pool = None

    def _open(self, b: int, s: int, env: bytes) -> bytes:
        m = self.meta
        return self.sealer.open(env, SlotId(b, s, int(m.version[b]), int(m.wtag[b])))

    def _run_op(self, op: PhysicalOp) -> bytes | None:
        if op.kind != "slot_read":
            return None
        v = int(self.meta.version[op.bucket])
        return self._open(op.bucket, op.slot, self.client.read_slot(op.bucket, op.slot, v))

    def read(self, ops: Sequence[PhysicalOp]) -> dict[tuple[int, int], bytes]:
        res = run_dag(ops, self._run_op, self._pool)
        return {(o.bucket, o.slot): res[o.id] for o in ops if o.kind == "slot_read"}

    def read_in_order(self, ops: Sequence[PhysicalOp]) -> dict[tuple[int, int], bytes]:
        """One batched request preserving op order (used for verbatim replay)."""
        reads = [o for o in ops if o.kind == "slot_read"]
        if not reads:
            return {}
        m = self.meta
        envs = self.client.batch_read([(o.bucket, o.slot, int(m.version[o.bucket])) for o in reads])
        return {(o.bucket, o.slot): self._open(o.bucket, o.slot, e) for o, e in zip(reads, envs)}

    def flush(self, writes: Sequence[PhysicalOp], tag: int, stamp: int) -> None:
        """Seal and write one new version per bucket, then adopt it in metadata.

        Writes go out as up to ``workers`` BATCH_WRITE messages in parallel;
        an epoch without writes still sends one empty message declaring the
        stamp.
        """
        m = self.meta

        def seal(op: PhysicalOp) -> tuple[int, int, list[bytes]]:
            b = op.bucket
            v = int(m.version[b]) + 1
            return b, v, [self.sealer.seal(block_plaintext(p), SlotId(b, s, v, tag)) for s, p in enumerate(op.payload)]

        n_chunks = max(1, min(self.workers, len(writes)))
        chunks = [list(writes[i::n_chunks]) for i in range(n_chunks)]

        def send(chunk: list[PhysicalOp]) -> list[tuple[int, int, list[bytes]]]:
            items = [seal(op) for op in chunk]
            self.client.batch_write(stamp, items)
            return items

        if self._pool is None or n_chunks == 1:
            done = [send(c) for c in chunks]
        else:
            done = list(self._pool.map(send, chunks))
        for items in done:
            for b, v, _ in items:
                m.version[b] = v
                m.wtag[b] = tag


def resolve_payload(p: Payload, fetched: dict[tuple[int, int], bytes]) -> Payload:
    """Turn a ``SlotRef`` captured during simulation into the block it names."""
    if isinstance(p, SlotRef):
        raw = fetched.get((p.bucket, p.slot))
        return p if raw is None else Block.unpack(raw)
    return p


class BufferedPhysical:
    """Physical layer for the parallel path: no I/O during simulation."""

    def __init__(self) -> None:
        self.buffers: dict[int, list[Payload]] = {}
        self.local_reads = 0

    def read(self, bucket: int, slot: int, real: bool) -> Payload:
        buf = self.buffers.get(bucket)
        if buf is not None:
            self.local_reads += 1
            return buf[slot]
        return SlotRef(bucket, slot) if real else None

    def write_bucket(self, bucket: int, contents: list[Payload], stamp: int) -> None:
        self.buffers[bucket] = list(contents)

    def resolve(self, fetched: dict[tuple[int, int], bytes], stash: dict[int, StashEntry]) -> None:
        fix = lambda p: resolve_payload(p, fetched)  # noqa: E731
        for buf in self.buffers.values():
            for i, p in enumerate(buf):
                if isinstance(p, SlotRef):
                    buf[i] = fix(p)
        for e in stash.values():
            if isinstance(e.data, SlotRef):
                e.data = fix(e.data)

    def contents(self, bucket: int) -> list[Payload]:
        return self.buffers[bucket]

    def reset(self) -> None:
        self.buffers.clear()


@dataclass
class ParallelEpoch:
    """Drives one epoch of a core running on ``BufferedPhysical``."""

    core: Any  # RingOram
    physical: BufferedPhysical
    executor: Executor
    planner: EpochPlanner = field(init=False)
    _fed: int = field(init=False, default=0)

    def __post_init__(self) -> None:
        assert self.core.trace is not None, "parallel execution needs the core trace"
        self.begin()

    def begin(self) -> None:
        self.core.trace.clear()
        self._fed = 0
        self.physical.reset()
        self.planner = EpochPlanner(self.core.meta.valid.copy())

    def plan(self) -> list[PhysicalOp]:
        """Plan the storage reads implied by core activity since the last call."""
        ops = self.planner.feed(self.core.trace[self._fed:])
        self._fed = len(self.core.trace)
        return ops

    def execute(self, ops: Sequence[PhysicalOp], in_order: bool = False) -> dict[tuple[int, int], bytes]:
        fetched = self.executor.read_in_order(ops) if in_order else self.executor.read(ops)
        self.physical.resolve(fetched, self.core.stash)
        return fetched

    def step(self) -> dict[tuple[int, int], bytes]:
        return self.execute(self.plan())

    def flush(self, tag: int, stamp: int) -> list[PhysicalOp]:
        self.step()
        writes = self.planner.finish(self.physical.contents)
        self.executor.flush(writes, tag, stamp)
        self.begin()
        return writes


__all__ = [
    "PhysicalOp", "EpochPlan", "EpochPlanner", "plan_epoch", "run_dag", "Executor",
    "BufferedPhysical", "ParallelEpoch", "resolve_payload",
]
