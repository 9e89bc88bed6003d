"""Binary wire protocol between proxy and storage server.

Frame layout (little endian)::

    u32 length      bytes that follow this field
    u8  type        request type, or 0x80 OK / 0x81 ERR for responses
    u64 corr_id     echoed unchanged in the response
    ...             type-specific body

Request bodies::

    READ_SLOT     u32 bucket | u16 slot | i64 version (-1 = current)
    WRITE_BUCKET  u32 bucket | i64 version | u64 stamp | u16 n | n x (u32 len | bytes)
    ROLLBACK      u64 stamp
    LOG_APPEND    u8 record_type | u64 counter | bytes (rest of frame)
    LOG_READ      u8 record_type | u64 counter
    BATCH_READ    u32 n | n x (u32 bucket | u16 slot | i64 version)
    BATCH_WRITE   u64 stamp | u32 n | n x (u32 bucket | i64 version | u16 k | k x (u32 len | bytes))
    GC            u64 stamp

Response bodies: OK carries the result bytes (READ_SLOT: envelope;
BATCH_READ: u32 n | n x (u32 len | bytes); LOG_READ: record; others empty).
ERR carries u8 code | utf-8 message.
"""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import Union

from ..errors import NotFound, ProtocolError

HEADER = struct.Struct("<IBQ")
_U32 = struct.Struct("<I")


class Msg(IntEnum):
    READ_SLOT = 1
    WRITE_BUCKET = 2
    ROLLBACK = 3
    LOG_APPEND = 4
    LOG_READ = 5
    BATCH_READ = 6
    BATCH_WRITE = 7
    GC = 8
    OK = 0x80
    ERR = 0x81


class ErrCode(IntEnum):
    PROTOCOL = 1
    NOT_FOUND = 2


@dataclass(frozen=True)
class ReadSlot:
    bucket: int
    slot: int
    version: int = -1


@dataclass(frozen=True)
class WriteBucket:
    bucket: int
    version: int
    stamp: int
    envelopes: tuple[bytes, ...]


@dataclass(frozen=True)
class Rollback:
    stamp: int


@dataclass(frozen=True)
class LogAppend:
    record_type: int
    counter: int
    payload: bytes


@dataclass(frozen=True)
class LogRead:
    record_type: int
    counter: int


@dataclass(frozen=True)
class BatchRead:
    items: tuple[ReadSlot, ...]


@dataclass(frozen=True)
class BatchWrite:
    stamp: int
    items: tuple[WriteBucket, ...]


@dataclass(frozen=True)
class Gc:
    stamp: int


Request = Union[ReadSlot, WriteBucket, Rollback, LogAppend, LogRead, BatchRead, BatchWrite, Gc]


def _pack_blobs(blobs) -> bytes:
    return b"".join(_U32.pack(len(x)) + x for x in blobs)


def _unpack_blobs(buf: memoryview, off: int, n: int) -> tuple[list[bytes], int]:
    out = []
    for _ in range(n):
        (ln,) = _U32.unpack_from(buf, off)
        off += 4
        if off + ln > len(buf):
            raise ProtocolError("truncated blob")
        out.append(bytes(buf[off:off + ln]))
        off += ln
    return out, off


_RS = struct.Struct("<IHq")
_WB = struct.Struct("<IqQH")
_BWB = struct.Struct("<IqH")


def _body(req: Request) -> tuple[Msg, bytes]:
    if isinstance(req, ReadSlot):
        return Msg.READ_SLOT, _RS.pack(req.bucket, req.slot, req.version)
    if isinstance(req, WriteBucket):
        return Msg.WRITE_BUCKET, _WB.pack(req.bucket, req.version, req.stamp, len(req.envelopes)) + _pack_blobs(req.envelopes)
    if isinstance(req, Rollback):
        return Msg.ROLLBACK, struct.pack("<Q", req.stamp)
    if isinstance(req, LogAppend):
        return Msg.LOG_APPEND, struct.pack("<BQ", req.record_type, req.counter) + req.payload
    if isinstance(req, LogRead):
        return Msg.LOG_READ, struct.pack("<BQ", req.record_type, req.counter)
    if isinstance(req, BatchRead):
        return Msg.BATCH_READ, _U32.pack(len(req.items)) + b"".join(
            _RS.pack(r.bucket, r.slot, r.version) for r in req.items)
    if isinstance(req, BatchWrite):
        parts = [struct.pack("<QI", req.stamp, len(req.items))]
        for w in req.items:
            parts.append(_BWB.pack(w.bucket, w.version, len(w.envelopes)) + _pack_blobs(w.envelopes))
        return Msg.BATCH_WRITE, b"".join(parts)
    if isinstance(req, Gc):
        return Msg.GC, struct.pack("<Q", req.stamp)
    raise ProtocolError(f"unknown request {req!r}")


def frame(msg_type: int, corr: int, body: bytes) -> bytes:
    return HEADER.pack(HEADER.size - 4 + len(body), msg_type, corr) + body


def encode_request(req: Request, corr: int) -> bytes:
    t, body = _body(req)
    return frame(t, corr, body)


def split_frame(data: bytes) -> tuple[int, int, memoryview]:
    if len(data) < HEADER.size:
        raise ProtocolError("short frame")
    ln, t, corr = HEADER.unpack_from(data)
    if ln + 4 != len(data):
        raise ProtocolError(f"frame length {ln + 4} != {len(data)}")
    return t, corr, memoryview(data)[HEADER.size:]


def decode_request(data: bytes) -> tuple[int, Request]:
    t, corr, b = split_frame(data)
    try:
        if t == Msg.READ_SLOT:
            return corr, ReadSlot(*_RS.unpack_from(b))
        if t == Msg.WRITE_BUCKET:
            bucket, version, stamp, n = _WB.unpack_from(b)
            envs, _ = _unpack_blobs(b, _WB.size, n)
            return corr, WriteBucket(bucket, version, stamp, tuple(envs))
        if t == Msg.ROLLBACK:
            return corr, Rollback(*struct.unpack_from("<Q", b))
        if t == Msg.LOG_APPEND:
            rt, ctr = struct.unpack_from("<BQ", b)
            return corr, LogAppend(rt, ctr, bytes(b[9:]))
        if t == Msg.LOG_READ:
            return corr, LogRead(*struct.unpack_from("<BQ", b))
        if t == Msg.BATCH_READ:
            (n,) = _U32.unpack_from(b)
            return corr, BatchRead(tuple(ReadSlot(*_RS.unpack_from(b, 4 + i * _RS.size)) for i in range(n)))
        if t == Msg.BATCH_WRITE:
            stamp, n = struct.unpack_from("<QI", b)
            off, items = 12, []
            for _ in range(n):
                bucket, version, k = _BWB.unpack_from(b, off)
                envs, off = _unpack_blobs(b, off + _BWB.size, k)
                items.append(WriteBucket(bucket, version, stamp, tuple(envs)))
            return corr, BatchWrite(stamp, tuple(items))
        if t == Msg.GC:
            return corr, Gc(*struct.unpack_from("<Q", b))
    except struct.error as exc:
        raise ProtocolError(f"malformed body: {exc}") from None
    raise ProtocolError(f"unknown message type {t}")


def encode_ok(corr: int, payload: bytes = b"") -> bytes:
    return frame(Msg.OK, corr, payload)


def encode_err(corr: int, code: ErrCode, message: str) -> bytes:
    return frame(Msg.ERR, corr, bytes([code]) + message.encode())


def encode_blob_list(blobs) -> bytes:
    return _U32.pack(len(blobs)) + _pack_blobs(blobs)


def decode_blob_list(payload: bytes) -> list[bytes]:
    b = memoryview(payload)
    (n,) = _U32.unpack_from(b)
    out, _ = _unpack_blobs(b, 4, n)
    return out


def decode_response(data: bytes, corr: int) -> bytes:
    """Return the OK payload or raise the error the server reported."""
    t, rcorr, body = split_frame(data)
    if rcorr != corr:
        raise ProtocolError(f"correlation id {rcorr} != {corr}")
    if t == Msg.OK:
        return bytes(body)
    if t == Msg.ERR:
        code, msg = body[0], bytes(body[1:]).decode(errors="replace")
        if code == ErrCode.NOT_FOUND:
            raise NotFound(msg)
        raise ProtocolError(msg)
    raise ProtocolError(f"unexpected response type {t}")


def read_frame(sock: socket.socket) -> bytes | None:
    head = _recv_exact(sock, 4)
    if head is None:
        return None
    (ln,) = _U32.unpack(head)
    body = _recv_exact(sock, ln)
    if body is None:
        raise ProtocolError("connection closed mid-frame")
    return head + body


def _recv_exact(sock: socket.socket, n: int) -> bytes | None:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            if not buf:
                return None
            raise ProtocolError("connection closed mid-frame")
        buf += chunk
    return bytes(buf)
