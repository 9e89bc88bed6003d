"""Shapes client traffic into the fixed epoch structure.

An epoch has ``R`` read batches of exactly ``b_read`` slots followed by one
write batch of exactly ``b_write`` slots. Reads that an epoch version or an
already loaded base can answer are served from the version cache; other reads
are deduplicated per key and placed in the next read batch with room, or the
transaction aborts when every remaining batch is full.

All state sits behind one lock (the scheduling authority). Futures are
completed after the lock is released.
"""
from __future__ import annotations

import threading
from concurrent.futures import Future
from dataclasses import dataclass, field

from .config import EpochConfig
from .errors import TxnAborted
from .mvtso import Mvtso, Status, Txn, make_ts
from .oram import Block

ReadResult = tuple["bytes | None", int]  # (value, writer_ts)


@dataclass(frozen=True)
class CommittedTxn:
    ts: int
    reads: tuple[tuple[int, int], ...]
    writes: tuple[tuple[int, bytes], ...]


@dataclass
class EpochOutcome:
    epoch: int
    committed: list[int]
    aborted: list[int]
    write_batch: list[Block | None]
    history: list[CommittedTxn] = field(default_factory=list)
    commit_bitmap: bytes = b""


class _Completions:
    """Collects future completions to run once the lock is dropped."""

    def __init__(self) -> None:
        self.items: list[tuple[Future, object, bool]] = []

    def ok(self, fut: Future, value) -> None:
        self.items.append((fut, value, True))

    def fail(self, fut: Future, exc: Exception) -> None:
        self.items.append((fut, exc, False))

    def run(self) -> None:
        for fut, val, ok in self.items:
            if fut.done():
                continue
            if ok:
                fut.set_result(val)
            else:
                fut.set_exception(val)


class BatchManager:
    def __init__(self, cfg: EpochConfig, max_txns: int = 1024, epoch: int = 1, incarnation: int = 0):
        self.cfg = cfg
        self.max_txns = max_txns
        self._lock = threading.RLock()
        self.start_epoch(epoch, incarnation)

    # -- epoch lifecycle ---------------------------------------------------------

    def start_epoch(self, epoch: int, incarnation: int) -> None:
        with self._lock:
            self.epoch = epoch
            self.incarnation = incarnation
            self.mv = Mvtso()
            self.batches: list[list[int]] = [[] for _ in range(self.cfg.R)]
            self.scheduled: dict[int, int] = {}
            self.waiters: dict[int, list[tuple[Txn, Future]]] = {}
            self.pending: dict[int, list[Future]] = {}  # txn ts -> unresolved futures
            self.commit_futures: dict[int, Future] = {}
            self.next_batch = 0
            self._seq = 0
            self.cache_hits = 0
            self.converted = 0

    def fail_all(self, reason: str) -> None:
        """Crash path: every open future of this epoch fails."""
        done = _Completions()
        with self._lock:
            for ts, futs in self.pending.items():
                for f in futs:
                    done.fail(f, TxnAborted(ts, reason))
            for ts, f in self.commit_futures.items():
                done.fail(f, TxnAborted(ts, reason))
            self.pending.clear()
            self.commit_futures.clear()
        done.run()

    # -- client API --------------------------------------------------------------

    def begin(self) -> Txn:
        with self._lock:
            if self._seq >= self.max_txns:
                raise TxnAborted(-1, "epoch transaction limit reached")
            ts = make_ts(self.epoch, self.incarnation, self._seq)
            self._seq += 1
            return self.mv.register(ts)

    def _abort(self, txns: list[Txn], done: _Completions) -> None:
        for t in txns:
            # commit futures stay open: every decision is released at epoch end
            for f in self.pending.pop(t.ts, []):
                done.fail(f, TxnAborted(t.ts, t.reason))

    def read(self, txn: Txn, key: int) -> Future:
        fut: Future = Future()
        done = _Completions()
        with self._lock:
            try:
                self._read(txn, key, fut, done)
            except TxnAborted as exc:
                done.fail(fut, exc)
        done.run()
        return fut

    def _read(self, txn: Txn, key: int, fut: Future, done: _Completions) -> None:
        if txn.status is not Status.ACTIVE:
            raise TxnAborted(txn.ts, txn.reason or txn.status.value)
        where = self.mv.peek(txn, key)
        chain = self.mv.chains.get(key)
        loaded = chain is not None and chain.base_loaded
        if where == "base" and not loaded and key not in self.scheduled:
            slot = next((j for j in range(self.next_batch, self.cfg.R)
                         if len(self.batches[j]) < self.cfg.b_read), None)
            if slot is None:
                self._abort(self.mv.abort(txn, "all read batches full"), done)
                raise TxnAborted(txn.ts, "all read batches full")
            self.batches[slot].append(key)
            self.scheduled[key] = slot
        v = self.mv.read(txn, key)
        if v is not None:
            txn.reads.append((key, v.writer_ts))
            self.cache_hits += 1
            done.ok(fut, (v.value, v.writer_ts))
            return
        chain = self.mv.chains[key]
        if chain.base_loaded:
            txn.reads.append((key, chain.base_writer))
            self.cache_hits += 1
            done.ok(fut, (chain.base_value, chain.base_writer))
            return
        self.waiters.setdefault(key, []).append((txn, fut))
        self.pending.setdefault(txn.ts, []).append(fut)

    def write(self, txn: Txn, key: int, value: bytes) -> None:
        done = _Completions()
        with self._lock:
            aborted = self.mv.write(txn, key, value)
            self._abort(aborted, done)
        done.run()
        if aborted:
            raise TxnAborted(txn.ts, txn.reason)

    def commit(self, txn: Txn) -> Future:
        """Mark ``txn`` finished. The future yields True/False when the epoch ends."""
        fut: Future = Future()
        with self._lock:
            if txn.status is not Status.ACTIVE:
                fut.set_exception(TxnAborted(txn.ts, txn.reason or txn.status.value))
                return fut
            self.mv.complete(txn)
            self.commit_futures[txn.ts] = fut
        return fut

    def abort(self, txn: Txn, reason: str = "client abort") -> None:
        done = _Completions()
        with self._lock:
            self._abort(self.mv.abort(txn, reason), done)
        done.run()

    # -- batch cadence -----------------------------------------------------------

    def fire_read_batch(self, j: int) -> list[int | None]:
        """Freeze batch ``j``: exactly ``b_read`` entries, ``None`` marking dummies."""
        with self._lock:
            assert j == self.next_batch, f"batch {j} fired out of order"
            self.next_batch = j + 1
            out: list[int | None] = []
            for key in self.batches[j]:
                c = self.mv.chains.get(key)
                if c is not None and c.base_loaded:
                    self.converted += 1  # loaded meanwhile: keep the slot, read a dummy
                    out.append(None)
                else:
                    out.append(key)
            return out + [None] * (self.cfg.b_read - len(out))

    def deliver(self, results: dict[int, Block | None]) -> None:
        """Install base versions loaded by a read batch and wake waiting reads."""
        done = _Completions()
        with self._lock:
            for key, blk in results.items():
                c = self.mv.chain(key)
                c.base_loaded = True
                c.base_value = None if blk is None else blk.value
                c.base_writer = 0 if blk is None else blk.writer_ts
                for txn, fut in self.waiters.pop(key, []):
                    futs = self.pending.get(txn.ts, [])
                    if fut in futs:
                        futs.remove(fut)
                    if txn.status is Status.ABORTED:
                        done.fail(fut, TxnAborted(txn.ts, txn.reason))
                    else:
                        txn.reads.append((key, c.base_writer))
                        done.ok(fut, (c.base_value, c.base_writer))
        done.run()

    def finalize_epoch(self) -> EpochOutcome:
        """Decide the epoch: abort unfinished work, enforce the write-batch bound,
        assemble the padded write batch. Clients are not notified here."""
        done = _Completions()
        with self._lock:
            survivors, aborted = self.mv.resolve_epoch()
            self._abort(aborted, done)
            while True:
                dirty = self.mv.dirty_keys()
                excess = len(dirty) - self.cfg.b_write
                if excess <= 0:
                    break
                owners = sorted({v.writer_ts for k in dirty for v in self.mv.chains[k].versions})
                victim = self.mv.txns[owners[0]]
                self._abort(self.mv.abort(victim, "write batch overflow"), done)
            committed = [t for t in self.mv.txns.values() if t.status is Status.COMPLETED]
            committed.sort(key=lambda t: t.ts)
            batch: list[Block | None] = []
            for key in self.mv.dirty_keys():
                v = self.mv.last_version(key)
                batch.append(Block(key, v.writer_ts, v.value))
            batch += [None] * (self.cfg.b_write - len(batch))
            bitmap = bytearray(self.max_txns // 8)
            for t in committed:
                bitmap[t.seq // 8] |= 1 << (t.seq % 8)
            outcome = EpochOutcome(
                epoch=self.epoch,
                committed=[t.ts for t in committed],
                aborted=sorted(t.ts for t in self.mv.txns.values() if t.status is Status.ABORTED),
                write_batch=batch,
                history=[CommittedTxn(t.ts, tuple(t.reads), tuple(sorted(t.writes.items()))) for t in committed],
                commit_bitmap=bytes(bitmap),
            )
        done.run()
        return outcome

    def notify(self, outcome: EpochOutcome) -> None:
        """Release commit decisions. Call only once the epoch is durable."""
        done = _Completions()
        with self._lock:
            committed = set(outcome.committed)
            for t in self.mv.txns.values():
                if t.ts in committed:
                    t.status = Status.COMMITTED
            for ts, fut in self.commit_futures.items():
                done.ok(fut, ts in committed)
            self.commit_futures.clear()
            for ts, futs in self.pending.items():
                for f in futs:
                    done.fail(f, TxnAborted(ts, "epoch ended"))
            self.pending.clear()
        done.run()


__all__ = ["BatchManager", "EpochOutcome", "CommittedTxn", "ReadResult"]
