"""The trusted proxy: epochs, durability and crash recovery around the ORAM core.

Time is a logical clock. Every ``step()`` is one tick: ticks ``0..R-1`` of an
epoch fire read batches, tick ``R`` ends the epoch. Within a read batch the
order of externally visible operations is fixed::

    hook read-batch-init     -> append path log
    hook read-batch-counter  -> counter.batch = j + 1
    hook read-batch-read     -> storage reads, results to waiting txns

and at the end of the epoch::

    hook write-epoch         -> bucket writes, checkpoint append
    hook epoch-counter       -> counter.epoch = e, GC, commit notifications

Recovery bumps the incarnation, then ``hook recover-read`` (rollback, log
reads, replayed slot reads, recovery writes and checkpoint) and ``hook
recover-counter`` (counter closes the recovery). A hook may raise ``Crash``;
the proxy object is then dead and ``Proxy.recover`` builds a new one from the
keys, the trusted counter and storage alone.
"""
from __future__ import annotations

import collections
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .batching import BatchManager, EpochOutcome
from .config import ProxyConfig
from .crypto import ProxyKeys, Sealer, SlotId
from .durability import (
    CKPT_DELTA, CKPT_FULL, PATH_LOG, PathLog, Records, TrustedCounter, freshness_tag,
    record_counter,
)
from .errors import Crash, IntegrityError, NotFound, OblivError
from .executor import BufferedPhysical, Executor, ParallelEpoch, resolve_payload
from .mvtso import Txn, split_ts
from .observer import Trace
from .oram import Block, RingOram, TreeMeta, validate_value

BATCH_HOOKS = ("read-batch-init", "read-batch-counter", "read-batch-read")
EPOCH_HOOKS = ("write-epoch", "epoch-counter")
RECOVERY_HOOKS = ("recover-read", "recover-counter")

CrashHook = Callable[[str, int, int], None]


def epoch_hooks(R: int) -> list[tuple[str, int]]:
    """Hook points of one epoch in firing order, as (name, batch)."""
    out = [(h, j) for j in range(R) for h in BATCH_HOOKS]
    return out + [(h, R) for h in EPOCH_HOOKS]


def _rng(seed: int, epoch: int, incarnation: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng([seed & (2**64 - 1), seed >> 64, epoch, incarnation, purpose])


@dataclass
class RecoveryReport:
    epoch: int  # last committed epoch
    batches: int  # logged read batches replayed
    incarnation: int
    logs: list[PathLog] = field(default_factory=list)
    replayed: list[tuple[int, int]] = field(default_factory=list)  # (bucket, slot) in issue order
    deltas_applied: int = 0


class Proxy:
    """Do not construct directly: use ``create`` for a fresh deployment or ``recover``."""

    def __init__(self, cfg: ProxyConfig, client, keys: ProxyKeys, counter: TrustedCounter,
                 trace: Trace | None, crash_hook: CrashHook | None):
        self.cfg = cfg.validate()
        self.g = cfg.geometry
        self.client = client
        self.keys = keys
        self.counter = counter
        self.trace = trace if trace is not None else Trace()
        self.crash_hook = crash_hook
        self.sealer = Sealer(keys, self.g.block_size, cfg.integrity)
        self.records = Records(cfg, self.sealer)
        self.dead = False
        self.history: list = []  # committed txns, in commit order, for this instance
        self.outcomes: list[EpochOutcome] = []
        self.recovery: RecoveryReport | None = None
        self._leaves: list[int] = []
        self.executed: list[tuple[int, int, int, int]] = []  # (epoch, batch, first seq, end seq)
        self._stamps: collections.deque[int] = collections.deque(maxlen=cfg.gc_windows)

    # -- construction ----------------------------------------------------------

    def _attach(self, meta: TreeMeta, stash, evict_count: int, rng: np.random.Generator) -> None:
        self.physical = BufferedPhysical()
        self.core = RingOram(self.g, self.physical, rng, meta=meta, stash=stash,
                             evict_count=evict_count, trace=[], on_path=self._leaves.append)
        self.executor = Executor(self.client, self.sealer, self.core.meta, self.cfg.workers)
        self.par = ParallelEpoch(self.core, self.physical, self.executor)

    @classmethod
    def create(cls, cfg: ProxyConfig, client, keys: ProxyKeys | None = None,
               counter: TrustedCounter | None = None, trace: Trace | None = None,
               crash_hook: CrashHook | None = None) -> "Proxy":
        """Format storage with an all-dummy tree and open epoch 1."""
        keys = keys or ProxyKeys.generate(cfg.seed)
        self = cls(cfg, client, keys, counter or TrustedCounter(), trace, crash_hook)
        g = self.g
        meta = TreeMeta.fresh(g, _rng(keys.seed, 0, 0, 2))
        items = [(b, 0, [self.sealer.seal(b"", SlotId(b, s, 0, 0)) for s in range(g.slots)])
                 for b in range(g.n_buckets)]
        for i in range(0, len(items), 256):
            client.batch_write(0, items[i:i + 256])
        self._attach(meta, {}, 0, _rng(keys.seed, 1, 0, 0))
        ck = self.records.snapshot(meta, {}, epoch=0, incarnation=0, recovered=False, full=True,
                                   evict_count=0, prev=None, commit_bitmap=b"")
        client.log_append(CKPT_FULL, ck.counter, self.records.encode_checkpoint(ck))
        self.counter.update(epoch=0, batch=0, incarnation=0, epoch_incarnation=0,
                            ckpt_type=CKPT_FULL, ckpt_counter=ck.counter)
        self._open_epoch(1, 0)
        return self

    @classmethod
    def recover(cls, cfg: ProxyConfig, client, keys: ProxyKeys, counter: TrustedCounter,
                trace: Trace | None = None, crash_hook: CrashHook | None = None) -> "Proxy":
        """Rebuild from the trusted counter and storage, replaying the aborted epoch's logs."""
        self = cls(cfg, client, keys, counter, trace, crash_hook)
        self._recover()
        return self

    # -- hooks ---------------------------------------------------------------------

    def _hook(self, point: str, batch: int) -> None:
        if self.crash_hook is None:
            return
        try:
            self.crash_hook(point, self.epoch, batch)
        except Crash:
            self.die(point)
            raise

    def die(self, point: str = "external") -> None:
        """Drop all volatile state. Pending client futures fail."""
        if self.dead:
            return
        self.dead = True
        st = self.counter.read()
        self.trace.record("crash", counters=(st.epoch, st.batch, st.incarnation))
        bm = getattr(self, "bm", None)
        if bm is not None:
            bm.fail_all(f"proxy crashed at {point}")
        ex = getattr(self, "executor", None)
        if ex is not None:
            ex.close()

    def close(self) -> None:
        ex = getattr(self, "executor", None)
        if ex is not None:
            ex.close()

    def _alive(self) -> None:
        if self.dead:
            raise OblivError("proxy has crashed; recover a new instance")

    # -- client API ------------------------------------------------------------------

    def begin(self) -> Txn:
        self._alive()
        return self.bm.begin()

    def read(self, txn: Txn, key: int):
        self._alive()
        self.core._check_key(key)
        return self.bm.read(txn, key)

    def write(self, txn: Txn, key: int, value: bytes) -> None:
        self._alive()
        self.core._check_key(key)
        validate_value(value, self.sealer.capacity)
        self.bm.write(txn, key, value)

    def commit(self, txn: Txn):
        self._alive()
        return self.bm.commit(txn)

    def abort(self, txn: Txn) -> None:
        self._alive()
        self.bm.abort(txn)

    def status(self, ts: int) -> str:
        """Commit status of any transaction ever begun: committed, aborted or pending."""
        epoch, inc, seq = split_ts(ts)
        st = self.counter.read()
        if epoch > st.epoch:
            if epoch == self.epoch and inc == self.incarnation and not self.dead:
                return "pending"
            return "aborted"
        for later in range(inc + 1, st.incarnation + 1):
            if self._ckpt_exists(epoch, later):
                return "aborted"  # that attempt of the epoch crashed and was redone
        ck = self._find_checkpoint(epoch, inc)
        if ck is None:
            return "aborted"
        return "committed" if ck.commit_bitmap[seq // 8] >> (seq % 8) & 1 else "aborted"

    def _ckpt_exists(self, epoch: int, inc: int) -> bool:
        return self._find_checkpoint(epoch, inc) is not None

    def _find_checkpoint(self, epoch: int, inc: int):
        ctr = record_counter(epoch, inc, 0)
        for rtype in (CKPT_FULL, CKPT_DELTA):
            try:
                record = self.client.log_read(rtype, ctr)
            except NotFound:
                continue
            return self.records.decode_checkpoint(rtype, ctr, record)
        return None

    # -- epoch machinery ---------------------------------------------------------------

    def _open_epoch(self, epoch: int, incarnation: int) -> None:
        self.epoch = epoch
        self.incarnation = incarnation
        self.batch = 0
        self.core.rng = _rng(self.keys.seed, epoch, incarnation, 0)
        self.par.begin()
        if getattr(self, "bm", None) is None:
            self.bm = BatchManager(self.cfg.epoch, self.cfg.max_txns_per_epoch, epoch, incarnation)
        else:
            self.bm.start_epoch(epoch, incarnation)

    def step(self) -> None:
        """Advance the logical clock by one tick."""
        self._alive()
        self.trace.tick += 1
        if self.batch < self.cfg.epoch.R:
            self._read_batch()
        else:
            self._end_epoch()

    def run_epoch(self) -> EpochOutcome:
        start = self.epoch
        while self.epoch == start:
            self.step()
        return self.outcomes[-1]

    def _read_batch(self) -> None:
        e, j, inc = self.epoch, self.batch, self.incarnation
        keys = self.bm.fire_read_batch(j)
        self._leaves.clear()
        accessed: list[tuple[int, object]] = []
        for k in keys:
            ent = self.core.access(k)
            if k is not None:
                accessed.append((k, None if ent is None else ent.data))
        leaves = list(self._leaves)
        ops = self.par.plan()
        log = PathLog(e, inc, j, list(zip(leaves, [-1 if k is None else k for k in keys])),
                      [(o.bucket, o.slot, o.reason) for o in ops if o.kind == "slot_read"])
        self._hook("read-batch-init", j)
        self.client.log_append(PATH_LOG, log.counter, self.records.encode_log(log))
        self._hook("read-batch-counter", j)
        st = self.counter.update(batch=j + 1)
        self.trace.record("counter", counters=(st.epoch, st.batch, st.incarnation))
        self._hook("read-batch-read", j)
        for leaf in leaves:
            self.trace.record("path", leaf=leaf)
        mark = self.trace.mark()
        fetched = self.par.execute(ops)
        self.executed.append((e, j, mark, self.trace.mark()))
        self.batch = j + 1
        results = {}
        for k, data in accessed:
            blk = resolve_payload(data, fetched) if data is not None else None
            if blk is not None and (not isinstance(blk, Block) or blk.key != k):
                raise IntegrityError(f"slot for key {k} decrypted to a different object")
            results[k] = blk
        self.bm.deliver(results)

    def _end_epoch(self) -> None:
        e, inc, R = self.epoch, self.incarnation, self.cfg.epoch.R
        self._hook("write-epoch", R)
        outcome = self.bm.finalize_epoch()
        for blk in outcome.write_batch:
            if blk is None:
                self.core.dummy_write()
            else:
                self.core.dummiless_write(blk.key, blk)
        stamp = self.core.evict_count
        self.par.flush(freshness_tag(e, inc, False), stamp)
        full = e % self.cfg.full_checkpoint_every == 0
        st = self.counter.read()
        ck = self.records.snapshot(
            self.core.meta, self.core.stash, epoch=e, incarnation=inc, recovered=False, full=full,
            evict_count=stamp, prev=None if full else (st.ckpt_type, st.ckpt_counter),
            commit_bitmap=outcome.commit_bitmap, dirty_keys=self.core.dirty_keys,
            dirty_buckets=self.core.dirty_buckets)
        self.client.log_append(ck.record_type, ck.counter, self.records.encode_checkpoint(ck))
        self.core.dirty_keys.clear()
        self.core.dirty_buckets.clear()
        self._hook("epoch-counter", R)
        st = self.counter.update(epoch=e, batch=0, ckpt_type=ck.record_type, ckpt_counter=ck.counter)
        self.trace.record("counter", counters=(st.epoch, st.batch, st.incarnation))
        # only committed states may be collected: rollback never goes below them
        self._stamps.append(stamp)
        self.client.gc(self._stamps[0])
        self.trace.record("notify", counters=(e, len(outcome.committed)))
        self.outcomes.append(outcome)
        self.history.extend(outcome.history)
        self.bm.notify(outcome)
        self._open_epoch(e + 1, inc)

    # -- recovery ------------------------------------------------------------------------

    def _recover(self) -> None:
        cfg, client = self.cfg, self.client
        st0 = self.counter.read()
        if st0.incarnation + 1 >= 1 << 12:
            raise OblivError("incarnation space exhausted")
        st = self.counter.update(incarnation=st0.incarnation + 1)
        inc, c_e, c_b = st.incarnation, st.epoch, st.batch
        self.epoch, self.incarnation, self.batch = c_e + 1, inc, 0
        rep = RecoveryReport(c_e, c_b, inc)
        self.recovery = rep
        self.trace.tick += 1
        self._hook("recover-read", -1)
        meta, ck, rep.deltas_applied = self.records.load_chain(client, st.ckpt_type, st.ckpt_counter)
        client.rollback(ck.evict_count)
        self._attach(meta, ck.stash, ck.evict_count, _rng(self.keys.seed, c_e + 1, inc, 1))
        for j in range(c_b):
            log = self.records.fetch_log(client, c_e + 1, st.epoch_incarnation, j)
            rep.logs.append(log)
            for b, s, _ in log.reads:
                self.core.replay_read(b, s)
            for _, key in log.entries:
                if key >= 0:
                    self.core.remap(key)
            ops = self.par.plan()
            for leaf, _ in log.entries:
                self.trace.record("path", leaf=leaf)
            self.par.execute(ops, in_order=True)
            rep.replayed += [(o.bucket, o.slot) for o in ops if o.kind == "slot_read"]
        self.core.catch_up(c_b * cfg.epoch.b_read)
        self.core.reshuffle_all()
        stamp = self.core.evict_count
        self.par.flush(freshness_tag(c_e, inc, True), stamp)
        rck = self.records.snapshot(self.core.meta, self.core.stash, epoch=c_e, incarnation=inc,
                                    recovered=True, full=True, evict_count=stamp, prev=None,
                                    commit_bitmap=ck.commit_bitmap)
        client.log_append(CKPT_FULL, rck.counter, self.records.encode_checkpoint(rck))
        self.core.dirty_keys.clear()
        self.core.dirty_buckets.clear()
        self._hook("recover-counter", -1)
        st = self.counter.update(batch=0, epoch_incarnation=inc, ckpt_type=CKPT_FULL, ckpt_counter=rck.counter)
        self.trace.record("counter", counters=(st.epoch, st.batch, st.incarnation))
        self._stamps.append(stamp)
        self._open_epoch(c_e + 1, inc)

    # -- inspection ----------------------------------------------------------------------

    def debug_state(self) -> dict[int, tuple[bytes, int]]:
        """Decrypt the whole logical database (tree plus stash) without touching the trace."""
        from .storage import StorageClient

        raw = StorageClient(self.client.transport)
        m = self.core.meta
        out: dict[int, tuple[bytes, int]] = {}
        for b, s in np.argwhere(m.slot_key >= 0).tolist():
            v = int(m.version[b])
            blk = Block.unpack(self.sealer.open(raw.read_slot(b, s, v), SlotId(b, s, v, int(m.wtag[b]))))
            out[blk.key] = (blk.value, blk.writer_ts)
        for key, e in self.core.stash.items():
            if isinstance(e.data, Block):
                out[key] = (e.data.value, e.data.writer_ts)
        return out

    @property
    def stash_high(self) -> int:
        return self.core.stash_high


__all__ = ["Proxy", "RecoveryReport", "epoch_hooks", "BATCH_HOOKS", "EPOCH_HOOKS", "RECOVERY_HOOKS"]
