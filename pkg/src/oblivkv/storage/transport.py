"""Byte-level transports. Each carries one request frame and returns one response frame."""
from __future__ import annotations

import socket
import socketserver
import threading
import time
from typing import Protocol

from ..errors import ProtocolError
from . import wire
from .store import StorageServer


class Transport(Protocol):
    def roundtrip(self, frame: bytes) -> bytes: ...


class InProcessTransport:
    """Deterministic transport: frames go through the codec but not a socket."""

    def __init__(self, server: StorageServer):
        self.server = server

    def roundtrip(self, frame: bytes) -> bytes:
        return self.server.handle(frame)


class LatencyTransport:
    """Adds a fixed delay per round trip, modelling a remote store."""

    def __init__(self, inner: Transport, delay: float):
        self.inner = inner
        self.delay = delay

    def roundtrip(self, frame: bytes) -> bytes:
        time.sleep(self.delay)
        return self.inner.roundtrip(frame)


class TcpTransport:
    """One persistent connection per calling thread."""

    def __init__(self, host: str, port: int, timeout: float = 30.0):
        self.addr = (host, port)
        self.timeout = timeout
        self._local = threading.local()

    def _sock(self) -> socket.socket:
        s = getattr(self._local, "sock", None)
        if s is None:
            s = socket.create_connection(self.addr, timeout=self.timeout)
            s.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            self._local.sock = s
        return s

    def roundtrip(self, frame: bytes) -> bytes:
        s = self._sock()
        s.sendall(frame)
        resp = wire.read_frame(s)
        if resp is None:
            self._local.sock = None
            raise ProtocolError("server closed connection")
        return resp


class _Handler(socketserver.BaseRequestHandler):
    def handle(self) -> None:
        sock = self.request
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        while True:
            try:
                frame = wire.read_frame(sock)
            except (ProtocolError, OSError):
                return
            if frame is None:
                return
            sock.sendall(self.server.storage.handle(frame))


class _TcpServer(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


def serve(storage: StorageServer, host: str = "127.0.0.1", port: int = 0) -> socketserver.ThreadingTCPServer:
    """Start serving in a background thread; returns the server (``server_address`` has the port)."""
    srv = _TcpServer((host, port), _Handler)
    srv.storage = storage
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    return srv
