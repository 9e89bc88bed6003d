"""Typed storage client over any transport. Records the adversary's view when given a trace."""
from __future__ import annotations

import itertools
import threading

from . import wire


class StorageClient:
    def __init__(self, transport, trace=None):
        self.transport = transport
        self.trace = trace
        self._ids = itertools.count(1)
        self._id_lock = threading.Lock()

    def _call(self, req: wire.Request) -> bytes:
        with self._id_lock:
            corr = next(self._ids)
        return wire.decode_response(self.transport.roundtrip(wire.encode_request(req, corr)), corr)

    def _event(self, kind: str, **kw) -> None:
        if self.trace is not None:
            self.trace.record(kind, **kw)

    def read_slot(self, bucket: int, slot: int, version: int = -1) -> bytes:
        env = self._call(wire.ReadSlot(bucket, slot, version))
        self._event("read", bucket=bucket, slot=slot, version=version, length=len(env))
        return env

    def batch_read(self, items: list[tuple[int, int, int]]) -> list[bytes]:
        out = wire.decode_blob_list(self._call(wire.BatchRead(tuple(wire.ReadSlot(*i) for i in items))))
        for (b, s, v), env in zip(items, out):
            self._event("read", bucket=b, slot=s, version=v, length=len(env))
        return out

    def write_bucket(self, bucket: int, version: int, stamp: int, envelopes) -> None:
        self._call(wire.WriteBucket(bucket, version, stamp, tuple(envelopes)))
        self._event("write", bucket=bucket, version=version, length=sum(map(len, envelopes)))

    def batch_write(self, stamp: int, items: list[tuple[int, int, list[bytes]]]) -> None:
        self._call(wire.BatchWrite(stamp, tuple(wire.WriteBucket(b, v, stamp, tuple(e)) for b, v, e in items)))
        for b, v, e in items:
            self._event("write", bucket=b, version=v, length=sum(map(len, e)))

    def rollback(self, stamp: int) -> None:
        self._call(wire.Rollback(stamp))
        self._event("rollback", counters=(stamp,))

    def gc(self, stamp: int) -> None:
        self._call(wire.Gc(stamp))
        self._event("gc", counters=(stamp,))

    def log_append(self, record_type: int, counter: int, payload: bytes) -> None:
        self._call(wire.LogAppend(record_type, counter, payload))
        self._event("log_append", counters=(record_type, counter), length=len(payload))

    def log_read(self, record_type: int, counter: int) -> bytes:
        try:
            out = self._call(wire.LogRead(record_type, counter))
        except Exception:
            self._event("log_read", counters=(record_type, counter), length=-1)
            raise
        self._event("log_read", counters=(record_type, counter), length=len(out))
        return out
