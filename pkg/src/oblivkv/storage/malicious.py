"""Malicious server mode: a response transformer layered over an honest transport.

Attack script (JSON list)::

    [{"kind": "tamper", "target": "read_slot", "skip": 3, "times": 1, "bit": 17},
     {"kind": "replay", "target": "read_slot"},
     {"kind": "withhold", "target": "log_read"}]

``skip`` lets that many matching requests through before the attack starts;
``times`` bounds how many responses are altered (0 = unbounded). ``read_slot``
also matches BATCH_READ, where only the first envelope is altered.
"""
from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

from . import wire
from .wire import ErrCode, Msg

_TARGETS = {"read_slot": (Msg.READ_SLOT, Msg.BATCH_READ), "log_read": (Msg.LOG_READ,)}


@dataclass
class Attack:
    kind: str  # tamper | replay | withhold
    target: str = "read_slot"
    skip: int = 0
    times: int = 1
    bit: int = 0
    fired: int = 0
    seen: int = 0

    def __post_init__(self):
        if self.kind not in ("tamper", "replay", "withhold"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.target not in _TARGETS:
            raise ValueError(f"unknown attack target {self.target!r}")


def load_script(path: str | Path) -> list[Attack]:
    with open(path) as fh:
        return [Attack(**a) for a in json.load(fh)]


def _flip(buf: bytes, bit: int) -> bytes:
    b = bytearray(buf)
    b[(bit // 8) % len(b)] ^= 1 << (bit % 8)
    return bytes(b)


class MaliciousTransport:
    def __init__(self, inner, attacks: list[Attack]):
        self.inner = inner
        self.attacks = attacks
        self._lock = threading.Lock()

    @property
    def fired(self) -> int:
        return sum(a.fired for a in self.attacks)

    def _pick(self, msg_type: int) -> Attack | None:
        with self._lock:
            for a in self.attacks:
                if msg_type not in _TARGETS[a.target]:
                    continue
                a.seen += 1
                if a.seen <= a.skip or (a.times and a.fired >= a.times):
                    continue
                a.fired += 1
                return a
        return None

    def roundtrip(self, frame: bytes) -> bytes:
        t, corr, _ = wire.split_frame(frame)
        attack = self._pick(t)
        if attack is None:
            return self.inner.roundtrip(frame)
        if attack.kind == "withhold":
            return wire.encode_err(corr, ErrCode.NOT_FOUND, "no such record")
        _, req = wire.decode_request(frame)
        if attack.kind == "replay":
            resp = self._replay(req, corr, frame)
            if resp is None:
                with self._lock:
                    attack.fired -= 1  # nothing older to serve; counts as a miss
                return self.inner.roundtrip(frame)
            return resp
        resp = self.inner.roundtrip(frame)
        rt, rcorr, body = wire.split_frame(resp)
        if rt != Msg.OK or not len(body):
            return resp
        body = bytes(body)
        if isinstance(req, wire.BatchRead):
            blobs = wire.decode_blob_list(body)
            blobs[0] = _flip(blobs[0], attack.bit)
            return wire.encode_ok(rcorr, wire.encode_blob_list(blobs))
        return wire.encode_ok(rcorr, _flip(body, attack.bit))

    def _replay(self, req, corr: int, frame: bytes) -> bytes | None:
        """Answer with stale data: an older bucket version or an older log record."""
        if isinstance(req, wire.LogRead):
            for back in range(1, 64):
                if req.counter - back < 0:
                    break
                resp = self.inner.roundtrip(wire.encode_request(wire.LogRead(req.record_type, req.counter - back), corr))
                if wire.split_frame(resp)[0] == Msg.OK:
                    return resp
            return None
        items = req.items if isinstance(req, wire.BatchRead) else (req,)
        first = items[0]
        if first.version <= 0:
            return None
        stale = wire.ReadSlot(first.bucket, first.slot, first.version - 1)
        if isinstance(req, wire.BatchRead):
            resp = self.inner.roundtrip(wire.encode_request(wire.BatchRead((stale,) + items[1:]), corr))
        else:
            resp = self.inner.roundtrip(wire.encode_request(stale, corr))
        return resp if wire.split_frame(resp)[0] == Msg.OK else None
