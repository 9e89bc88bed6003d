"""Untrusted storage: versioned bucket store (shadow paging) plus recovery log.

The server only ever sees coordinates, version numbers, stamps and opaque
envelopes. A stamp is the proxy's eviction counter at the time a bucket
version was flushed; rolling back to stamp ``c`` discards every version
flushed after ``c``.
"""
from __future__ import annotations

import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import NotFound, ProtocolError
from . import wire
from .wire import ErrCode, Msg


@dataclass
class _Version:
    version: int
    stamp: int
    envelopes: tuple[bytes, ...]


@dataclass
class BucketStore:
    buckets: dict[int, list[_Version]] = field(default_factory=dict)
    horizon: int = 0  # newest stamp written
    floor: int = 0  # oldest stamp still restorable

    def _history(self, bucket: int) -> list[_Version]:
        try:
            return self.buckets[bucket]
        except KeyError:
            raise ProtocolError(f"unknown bucket {bucket}") from None

    def read(self, bucket: int, slot: int, version: int = -1) -> bytes:
        hist = self._history(bucket)
        if version < 0:
            v = hist[-1]
        else:
            match = [h for h in hist if h.version == version]
            if not match:
                raise NotFound(f"bucket {bucket} version {version} not retained")
            v = match[0]
        if not 0 <= slot < len(v.envelopes):
            raise ProtocolError(f"slot {slot} out of range for bucket {bucket}")
        return v.envelopes[slot]

    def current_version(self, bucket: int) -> int:
        return self._history(bucket)[-1].version

    def write(self, bucket: int, version: int, stamp: int, envelopes: tuple[bytes, ...]) -> None:
        hist = self.buckets.get(bucket)
        if hist is None:
            if version != 0:
                raise ProtocolError(f"first write of bucket {bucket} must be version 0")
            self.buckets[bucket] = [_Version(0, stamp, envelopes)]
        else:
            if version != hist[-1].version + 1:
                raise ProtocolError(
                    f"version gap on bucket {bucket}: got {version}, current {hist[-1].version}")
            if stamp < hist[-1].stamp:
                raise ProtocolError(f"stamp {stamp} older than bucket {bucket}'s newest")
            hist.append(_Version(version, stamp, envelopes))
        self.horizon = max(self.horizon, stamp)

    def declare(self, stamp: int) -> None:
        self.horizon = max(self.horizon, stamp)

    def rollback_to(self, stamp: int) -> None:
        if stamp > self.horizon:
            raise ProtocolError(f"rollback target {stamp} beyond horizon {self.horizon}")
        if stamp < self.floor:
            raise ProtocolError(f"rollback target {stamp} below retained floor {self.floor}")
        for hist in self.buckets.values():
            while len(hist) > 1 and hist[-1].stamp > stamp:
                hist.pop()
        self.horizon = stamp

    def gc(self, stamp: int) -> None:
        stamp = min(stamp, self.horizon)
        for hist in self.buckets.values():
            keep = 0
            for i, h in enumerate(hist):
                if h.stamp <= stamp:
                    keep = i
            del hist[:keep]
        self.floor = max(self.floor, stamp)

    def snapshot(self) -> dict[int, tuple[int, tuple[bytes, ...]]]:
        return {b: (h[-1].version, h[-1].envelopes) for b, h in self.buckets.items()}


@dataclass
class RecoveryLog:
    """Append-only records keyed by (record_type, counter); reads see the newest."""

    records: dict[tuple[int, int], list[bytes]] = field(default_factory=dict)
    order: list[tuple[int, int]] = field(default_factory=list)

    def append(self, record_type: int, counter: int, payload: bytes) -> None:
        self.records.setdefault((record_type, counter), []).append(payload)
        self.order.append((record_type, counter))

    def read(self, record_type: int, counter: int) -> bytes:
        try:
            return self.records[(record_type, counter)][-1]
        except KeyError:
            raise NotFound(f"no record ({record_type}, {counter})") from None


class StorageServer:
    """Request handler shared by every transport.

    With ``directory`` set, each mutating request frame is appended to a
    journal and replayed on startup, which makes the store durable without a
    second on-disk format.
    """

    JOURNAL = "journal.bin"

    def __init__(self, directory: str | Path | None = None):
        self.store = BucketStore()
        self.log = RecoveryLog()
        self._lock = threading.Lock()
        self._journal = None
        if directory is not None:
            path = Path(directory)
            path.mkdir(parents=True, exist_ok=True)
            jpath = path / self.JOURNAL
            if jpath.exists():
                self._replay(jpath.read_bytes())
            self._journal = open(jpath, "ab")

    def _replay(self, data: bytes) -> None:
        off = 0
        while off + 4 <= len(data):
            ln = int.from_bytes(data[off:off + 4], "little")
            if off + 4 + ln > len(data):
                break  # torn tail from a crash mid-append
            _, req = wire.decode_request(data[off:off + 4 + ln])
            self._apply(req)
            off += 4 + ln

    def close(self) -> None:
        if self._journal is not None:
            self._journal.close()
            self._journal = None

    def handle(self, frame: bytes) -> bytes:
        try:
            corr, req = wire.decode_request(frame)
        except ProtocolError as exc:
            return wire.encode_err(0, ErrCode.PROTOCOL, str(exc))
        try:
            with self._lock:
                out = self._apply(req)
                if self._journal is not None and not isinstance(req, (wire.ReadSlot, wire.LogRead, wire.BatchRead)):
                    self._journal.write(frame)
                    self._journal.flush()
                    os.fsync(self._journal.fileno())
            return wire.encode_ok(corr, out)
        except NotFound as exc:
            return wire.encode_err(corr, ErrCode.NOT_FOUND, str(exc))
        except ProtocolError as exc:
            return wire.encode_err(corr, ErrCode.PROTOCOL, str(exc))

    def _apply(self, req: wire.Request) -> bytes:
        s = self.store
        if isinstance(req, wire.ReadSlot):
            return s.read(req.bucket, req.slot, req.version)
        if isinstance(req, wire.BatchRead):
            return wire.encode_blob_list([s.read(r.bucket, r.slot, r.version) for r in req.items])
        if isinstance(req, wire.WriteBucket):
            s.write(req.bucket, req.version, req.stamp, req.envelopes)
            return b""
        if isinstance(req, wire.BatchWrite):
            for w in req.items:
                s.write(w.bucket, w.version, req.stamp, w.envelopes)
            s.declare(req.stamp)
            return b""
        if isinstance(req, wire.Rollback):
            s.rollback_to(req.stamp)
            return b""
        if isinstance(req, wire.Gc):
            s.gc(req.stamp)
            return b""
        if isinstance(req, wire.LogAppend):
            self.log.append(req.record_type, req.counter, req.payload)
            return b""
        if isinstance(req, wire.LogRead):
            return self.log.read(req.record_type, req.counter)
        raise ProtocolError(f"unsupported request {type(req).__name__}")


__all__ = ["BucketStore", "RecoveryLog", "StorageServer", "Msg"]
