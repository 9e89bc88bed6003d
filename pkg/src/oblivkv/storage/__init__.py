"""Untrusted storage server, wire protocol, transports and the malicious-mode layer."""
from .client import StorageClient
from .malicious import Attack, MaliciousTransport, load_script
from .store import BucketStore, RecoveryLog, StorageServer
from .transport import InProcessTransport, LatencyTransport, TcpTransport, serve

__all__ = [
    "StorageClient", "Attack", "MaliciousTransport", "load_script", "BucketStore",
    "RecoveryLog", "StorageServer", "InProcessTransport", "LatencyTransport",
    "TcpTransport", "serve",
]
