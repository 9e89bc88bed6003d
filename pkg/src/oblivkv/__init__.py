"""Oblivious transactional key-value store.

A trusted proxy runs Ring ORAM over an untrusted storage server, batches
transactions into fixed-shape epochs under multiversioned timestamp ordering,
executes each epoch's physical I/O in parallel, and recovers from crashes
without changing what the server observes.
"""
from .config import EpochConfig, Geometry, ProxyConfig, load_config, small_config
from .crypto import ProxyKeys, Sealer
from .errors import (
    ConfigError, Crash, IntegrityError, NotFound, OblivError, ProtocolError, StashOverflow, TxnAborted,
)
from .observer import Trace
from .oram import Block, RingOram
from .proxy import Proxy
from .runner import CrashSchedule, RunReport, deploy, run
from .workload import WorkloadSpec

__version__ = "0.1.0"

__all__ = [
    "EpochConfig", "Geometry", "ProxyConfig", "load_config", "small_config", "ProxyKeys", "Sealer",
    "ConfigError", "Crash", "IntegrityError", "NotFound", "OblivError", "ProtocolError",
    "StashOverflow", "TxnAborted", "Trace", "Block", "RingOram", "Proxy", "CrashSchedule",
    "RunReport", "deploy", "run", "WorkloadSpec", "__version__",
]
