"""Durable records and the trusted counter.

Record identifiers
------------------
Every record in the recovery unit is addressed by ``(record_type, counter)``
and sealed with that pair as associated data::

    PATH_LOG   = 1   counter = record_counter(epoch, incarnation, batch)
    CKPT_FULL  = 2   counter = record_counter(epoch, incarnation, recovered)
    CKPT_DELTA = 3   same counter layout as CKPT_FULL

    record_counter(e, i, j) = e << 24 | i << 12 | j

The incarnation counts completed recoveries, so a retried epoch never reuses
an identifier of the attempt that crashed.

Stored record bytes::

    u32 public_len | public | envelope(secret, aad = RecordId + public)

Path logs have no public part. Checkpoints carry the slot valid bitmap
(packed bits, one per slot) in the public part; everything else is
encrypted. Each record class has one constant length for a given
configuration, whatever the epoch's activity.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import ProxyConfig
from .crypto import RecordId, Sealer
from .errors import IntegrityError, NotFound, StashOverflow
from .oram import BLOCK_HEADER, Block, StashEntry, TreeMeta

PATH_LOG = 1
CKPT_FULL = 2
CKPT_DELTA = 3

REASONS = ("access", "evict", "reshuffle", "expand", "replay")


def record_counter(epoch: int, incarnation: int, sub: int) -> int:
    assert 0 <= incarnation < 1 << 12 and 0 <= sub < 1 << 12
    return (epoch << 24) | (incarnation << 12) | sub


def freshness_tag(epoch: int, incarnation: int, recovery: bool) -> int:
    """Write tag for bucket versions; distinct per epoch attempt and recovery attempt."""
    return (epoch << 13) | (incarnation << 1) | int(recovery)


def split_counter(counter: int) -> tuple[int, int, int]:
    return counter >> 24, (counter >> 12) & 0xFFF, counter & 0xFFF


# -- trusted counter ------------------------------------------------------------


@dataclass(frozen=True)
class CounterState:
    epoch: int = 0  # last committed epoch
    batch: int = 0  # read batches of epoch+1 whose path log is durable
    incarnation: int = 0  # bumped when a recovery starts
    epoch_incarnation: int = 0  # incarnation the open epoch runs (and logs) under
    ckpt_type: int = CKPT_FULL
    ckpt_counter: int = 0


class TrustedCounter:
    """Small crash-surviving cell on the proxy. Updates are atomic."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self._state = CounterState()
        if self.path is not None and self.path.exists():
            self._state = CounterState(**json.loads(self.path.read_text()))

    def read(self) -> CounterState:
        with self._lock:
            return self._state

    def update(self, **changes) -> CounterState:
        with self._lock:
            new = CounterState(**{**asdict(self._state), **changes})
            if self.path is not None:
                fd, tmp = tempfile.mkstemp(dir=self.path.parent, prefix=".counter")
                with os.fdopen(fd, "w") as fh:
                    json.dump(asdict(new), fh)
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, self.path)
            self._state = new
            return new


# -- shapes ----------------------------------------------------------------------


@dataclass(frozen=True)
class Bounds:
    """Padding targets, all functions of the configuration only."""

    log_entries: int
    log_reads: int
    pos_delta: int
    perm_delta: int
    stash: int
    txns: int
    value_cap: int

    @classmethod
    def of(cls, cfg: ProxyConfig, sealer: Sealer) -> "Bounds":
        g, e = cfg.geometry, cfg.epoch
        nb, w, lv = g.n_buckets, g.slots, g.L + 1
        evict_batch = e.b_read // g.A + 1
        evict_epoch = e.accesses // g.A + 1
        return cls(
            log_entries=e.b_read,
            log_reads=min(nb * w, (e.b_read + evict_batch) * lv * w),
            pos_delta=e.R * e.b_read + e.b_write,
            perm_delta=min(nb, (evict_epoch + e.R * e.b_read) * lv + e.b_write),
            stash=cfg.stash_bound,
            txns=cfg.max_txns_per_epoch,
            value_cap=sealer.capacity - BLOCK_HEADER,
        )


def _log_dtypes() -> tuple[np.dtype, np.dtype]:
    entry = np.dtype([("leaf", "<i8"), ("key", "<i8")])
    read = np.dtype([("bucket", "<i4"), ("slot", "<i2"), ("reason", "u1")])
    return entry, read


_LOG_HDR = struct.Struct("<QIIII")  # epoch, incarnation, batch, n_entries, n_reads


@dataclass
class PathLog:
    epoch: int
    incarnation: int
    batch: int
    entries: list[tuple[int, int]]  # (leaf, key or -1)
    reads: list[tuple[int, int, str]]  # (bucket, slot, reason)

    @property
    def counter(self) -> int:
        return record_counter(self.epoch, self.incarnation, self.batch)


_CK_HDR = struct.Struct("<QIBBQBQ")  # epoch, inc, recovered, full, evict_count, prev_type, prev_counter


@dataclass
class CheckpointData:
    epoch: int
    incarnation: int
    recovered: bool
    full: bool
    evict_count: int
    prev: tuple[int, int] | None
    commit_bitmap: bytes
    # full checkpoints fill every array; deltas carry only changed rows
    pos_rows: np.ndarray  # structured (key, leaf, present)
    bucket_rows: np.ndarray  # structured (bucket, slot_key, version, wtag)
    valid: np.ndarray  # (nb, w) bool
    stash: dict[int, StashEntry] = field(default_factory=dict)

    @property
    def record_type(self) -> int:
        return CKPT_FULL if self.full else CKPT_DELTA

    @property
    def counter(self) -> int:
        return record_counter(self.epoch, self.incarnation, int(self.recovered))


class Records:
    """Encodes and decodes path logs and checkpoints for one configuration."""

    def __init__(self, cfg: ProxyConfig, sealer: Sealer):
        self.cfg = cfg
        self.g = cfg.geometry
        self.sealer = sealer
        self.bounds = Bounds.of(cfg, sealer)
        g, b = self.g, self.bounds
        self.entry_dt, self.read_dt = _log_dtypes()
        self.pos_dt = np.dtype([("key", "<i8"), ("leaf", "<i8"), ("present", "u1")])
        self.bucket_dt = np.dtype([("bucket", "<i8"), ("slot_key", "<i8", (g.slots,)), ("version", "<i8"), ("wtag", "<i8")])
        self.stash_dt = np.dtype([("key", "<i8"), ("leaf", "<i8"), ("ts", "<i8"), ("len", "<u4"), ("value", "u1", (b.value_cap,))])

    # -- sealing -----------------------------------------------------------------

    def _seal(self, rtype: int, counter: int, secret: bytes, public: bytes = b"") -> bytes:
        env = self.sealer.seal_record(secret, RecordId(rtype, counter), public)
        return struct.pack("<I", len(public)) + public + env

    def _open(self, rtype: int, counter: int, record: bytes) -> tuple[bytes, bytes]:
        if len(record) < 4:
            raise IntegrityError("truncated record")
        (n,) = struct.unpack_from("<I", record)
        if 4 + n > len(record):
            raise IntegrityError("record public section overruns record")
        public = record[4:4 + n]
        return self.sealer.open_record(record[4 + n:], RecordId(rtype, counter), public), public

    # -- path logs ---------------------------------------------------------------

    def encode_log(self, log: PathLog) -> bytes:
        b = self.bounds
        if len(log.entries) > b.log_entries or len(log.reads) > b.log_reads:
            raise AssertionError("path log exceeds its padding bound")
        ent = np.full(b.log_entries, -1, dtype=self.entry_dt)
        for i, (leaf, key) in enumerate(log.entries):
            ent[i] = (leaf, key)
        rd = np.zeros(b.log_reads, dtype=self.read_dt)
        rd["bucket"] = -1
        for i, (bk, s, why) in enumerate(log.reads):
            rd[i] = (bk, s, REASONS.index(why))
        head = _LOG_HDR.pack(log.epoch, log.incarnation, log.batch, len(log.entries), len(log.reads))
        return self._seal(PATH_LOG, log.counter, head + ent.tobytes() + rd.tobytes())

    def decode_log(self, counter: int, record: bytes) -> PathLog:
        raw, _ = self._open(PATH_LOG, counter, record)
        epoch, inc, batch, ne, nr = _LOG_HDR.unpack_from(raw)
        off = _LOG_HDR.size
        ent = np.frombuffer(raw, dtype=self.entry_dt, count=self.bounds.log_entries, offset=off)
        off += ent.nbytes
        rd = np.frombuffer(raw, dtype=self.read_dt, count=self.bounds.log_reads, offset=off)
        return PathLog(epoch, inc, batch,
                       [(int(a), int(k)) for a, k in ent[:ne].tolist()],
                       [(int(bk), int(s), REASONS[r]) for bk, s, r in rd[:nr].tolist()])

    # -- checkpoints ---------------------------------------------------------------

    def encode_checkpoint(self, ck: CheckpointData) -> bytes:
        g, b = self.g, self.bounds
        if len(ck.stash) > b.stash:
            raise StashOverflow(f"stash holds {len(ck.stash)} blocks, bound is {b.stash}")
        head = _CK_HDR.pack(ck.epoch, ck.incarnation, int(ck.recovered), int(ck.full), ck.evict_count,
                            0 if ck.prev is None else ck.prev[0], 0 if ck.prev is None else ck.prev[1])
        bitmap = ck.commit_bitmap.ljust(b.txns // 8, b"\0")
        n_pos = g.N if ck.full else b.pos_delta
        n_bk = g.n_buckets if ck.full else b.perm_delta
        if len(ck.pos_rows) > n_pos or len(ck.bucket_rows) > n_bk:
            raise AssertionError("checkpoint delta exceeds its padding bound")
        pos = np.zeros(n_pos, dtype=self.pos_dt)
        pos["key"] = -1
        pos[: len(ck.pos_rows)] = ck.pos_rows
        bk = np.zeros(n_bk, dtype=self.bucket_dt)
        bk["bucket"] = -1
        bk[: len(ck.bucket_rows)] = ck.bucket_rows
        st = np.zeros(b.stash, dtype=self.stash_dt)
        st["key"] = -1
        for i, (key, e) in enumerate(ck.stash.items()):
            blk = e.data
            assert isinstance(blk, Block), "unresolved stash entry at checkpoint"
            st[i]["key"], st[i]["leaf"], st[i]["ts"], st[i]["len"] = key, e.leaf, blk.writer_ts, len(blk.value)
            st[i]["value"][: len(blk.value)] = np.frombuffer(blk.value, dtype=np.uint8)
        secret = head + bitmap + pos.tobytes() + bk.tobytes() + st.tobytes()
        public = np.packbits(ck.valid.reshape(-1)).tobytes()
        return self._seal(ck.record_type, ck.counter, secret, public)

    def decode_checkpoint(self, rtype: int, counter: int, record: bytes) -> CheckpointData:
        g, b = self.g, self.bounds
        raw, public = self._open(rtype, counter, record)
        epoch, inc, rec, full, ec, ptype, pctr = _CK_HDR.unpack_from(raw)
        off = _CK_HDR.size
        bitmap = raw[off: off + b.txns // 8]
        off += b.txns // 8
        n_pos = g.N if full else b.pos_delta
        n_bk = g.n_buckets if full else b.perm_delta
        pos = np.frombuffer(raw, dtype=self.pos_dt, count=n_pos, offset=off)
        off += pos.nbytes
        bk = np.frombuffer(raw, dtype=self.bucket_dt, count=n_bk, offset=off)
        off += bk.nbytes
        st = np.frombuffer(raw, dtype=self.stash_dt, count=b.stash, offset=off)
        stash = {}
        for row in st:
            if row["key"] < 0:
                continue
            val = bytes(row["value"][: int(row["len"])])
            stash[int(row["key"])] = StashEntry(int(row["leaf"]), Block(int(row["key"]), int(row["ts"]), val))
        valid = np.unpackbits(np.frombuffer(public, dtype=np.uint8), count=g.n_buckets * g.slots).astype(bool)
        return CheckpointData(
            epoch=epoch, incarnation=inc, recovered=bool(rec), full=bool(full), evict_count=ec,
            prev=None if ptype == 0 else (ptype, pctr), commit_bitmap=bytes(bitmap),
            pos_rows=pos[pos["key"] >= 0].copy(), bucket_rows=bk[bk["bucket"] >= 0].copy(),
            valid=valid.reshape(g.n_buckets, g.slots), stash=stash,
        )

    def snapshot(self, meta: TreeMeta, stash: dict[int, StashEntry], *, epoch: int, incarnation: int,
                 recovered: bool, full: bool, evict_count: int, prev: tuple[int, int] | None,
                 commit_bitmap: bytes, dirty_keys=(), dirty_buckets=()) -> CheckpointData:
        if full:
            keys = np.arange(self.g.N)
            buckets = np.arange(self.g.n_buckets)
        else:
            keys = np.array(sorted(dirty_keys), dtype=np.int64)
            buckets = np.array(sorted(dirty_buckets), dtype=np.int64)
        pos = np.zeros(len(keys), dtype=self.pos_dt)
        pos["key"], pos["leaf"], pos["present"] = keys, meta.posmap[keys], meta.present[keys]
        bk = np.zeros(len(buckets), dtype=self.bucket_dt)
        bk["bucket"] = buckets
        bk["slot_key"] = meta.slot_key[buckets]
        bk["version"], bk["wtag"] = meta.version[buckets], meta.wtag[buckets]
        return CheckpointData(epoch, incarnation, recovered, full, evict_count, prev, commit_bitmap,
                              pos, bk, meta.valid.copy(),
                              {k: StashEntry(e.leaf, e.data) for k, e in stash.items()})

    def empty_meta(self) -> TreeMeta:
        g = self.g
        return TreeMeta(
            slot_key=np.full((g.n_buckets, g.slots), -1, dtype=np.int64),
            valid=np.ones((g.n_buckets, g.slots), dtype=bool),
            count=np.zeros(g.n_buckets, dtype=np.int64),
            version=np.zeros(g.n_buckets, dtype=np.int64),
            wtag=np.zeros(g.n_buckets, dtype=np.int64),
            posmap=np.zeros(g.N, dtype=np.int64),
            present=np.zeros(g.N, dtype=bool),
        )

    @staticmethod
    def apply(meta: TreeMeta, ck: CheckpointData) -> None:
        r = ck.pos_rows
        meta.posmap[r["key"]] = r["leaf"]
        meta.present[r["key"]] = r["present"].astype(bool)
        r = ck.bucket_rows
        meta.slot_key[r["bucket"]] = r["slot_key"]
        meta.version[r["bucket"]] = r["version"]
        meta.wtag[r["bucket"]] = r["wtag"]
        meta.valid[:] = ck.valid
        meta.count[:] = (~ck.valid).sum(axis=1)

    def fetch_checkpoint(self, client, rtype: int, counter: int) -> CheckpointData:
        try:
            record = client.log_read(rtype, counter)
        except NotFound:
            raise IntegrityError(f"checkpoint ({rtype}, {counter}) withheld by storage") from None
        ck = self.decode_checkpoint(rtype, counter, record)
        if ck.counter != counter or ck.record_type != rtype:
            raise IntegrityError("checkpoint header disagrees with its identifier")
        return ck

    def load_chain(self, client, rtype: int, counter: int) -> tuple[TreeMeta, CheckpointData, int]:
        """Rebuild metadata from the checkpoint at (rtype, counter) back to a full one.

        Returns (metadata, newest checkpoint, number of deltas applied).
        """
        chain = [self.fetch_checkpoint(client, rtype, counter)]
        while not chain[-1].full:
            prev = chain[-1].prev
            if prev is None:
                raise IntegrityError("delta checkpoint without predecessor")
            chain.append(self.fetch_checkpoint(client, *prev))
        meta = self.empty_meta()
        for ck in reversed(chain):
            self.apply(meta, ck)
        return meta, chain[0], len(chain) - 1

    def fetch_log(self, client, epoch: int, incarnation: int, batch: int) -> PathLog:
        counter = record_counter(epoch, incarnation, batch)
        try:
            record = client.log_read(PATH_LOG, counter)
        except NotFound:
            raise IntegrityError(f"path log {epoch}/{incarnation}/{batch} withheld by storage") from None
        log = self.decode_log(counter, record)
        if log.counter != counter:
            raise IntegrityError("path log header disagrees with its identifier")
        return log


__all__ = [
    "PATH_LOG", "CKPT_FULL", "CKPT_DELTA", "record_counter", "split_counter", "freshness_tag", "CounterState",
    "TrustedCounter", "Bounds", "PathLog", "CheckpointData", "Records", "REASONS",
]
