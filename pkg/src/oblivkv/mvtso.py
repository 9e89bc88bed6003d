"""Multiversioned timestamp ordering within one epoch.

Each key touched this epoch has a chain: a *base* version (the value committed
by an earlier epoch, possibly not loaded from the ORAM yet) followed by this
epoch's uncommitted versions ordered by writer timestamp. Reads pick the latest
version older than the reader (or the reader's own write), bump its read
marker and record a dependency on its writer. A write aborts when the version
it would follow has been read by a younger transaction.

Aborts excise the transaction's versions and cascade to every transaction
that observed them. Nothing commits before the epoch ends.
"""
from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from enum import Enum

from .errors import TxnAborted

SEQ_BITS = 20
INC_BITS = 12


def make_ts(epoch: int, incarnation: int, seq: int) -> int:
    """Timestamps order by epoch, then by sequence within the epoch's incarnation."""
    return (epoch << 32) | ((incarnation & ((1 << INC_BITS) - 1)) << SEQ_BITS) | seq


def split_ts(ts: int) -> tuple[int, int, int]:
    return ts >> 32, (ts >> SEQ_BITS) & ((1 << INC_BITS) - 1), ts & ((1 << SEQ_BITS) - 1)


class Status(str, Enum):
    ACTIVE = "active"
    COMPLETED = "completed"
    COMMITTED = "committed"
    ABORTED = "aborted"


@dataclass(eq=False)
class Txn:
    ts: int
    status: Status = Status.ACTIVE
    deps: set[int] = field(default_factory=set)
    dependents: set[int] = field(default_factory=set)
    reads: list[tuple[int, int]] = field(default_factory=list)  # (key, writer_ts)
    writes: dict[int, bytes] = field(default_factory=dict)
    reason: str = ""

    @property
    def seq(self) -> int:
        return split_ts(self.ts)[2]


@dataclass
class Version:
    writer_ts: int
    value: bytes | None
    marker: int = 0


@dataclass
class Chain:
    base_marker: int = 0
    base_loaded: bool = False
    base_value: bytes | None = None
    base_writer: int = 0
    versions: list[Version] = field(default_factory=list)

    def older_than(self, ts: int) -> Version | None:
        i = bisect.bisect_left([v.writer_ts for v in self.versions], ts)
        return self.versions[i - 1] if i else None

    def own(self, ts: int) -> Version | None:
        for v in self.versions:
            if v.writer_ts == ts:
                return v
        return None


class Mvtso:
    def __init__(self) -> None:
        self.txns: dict[int, Txn] = {}
        self.chains: dict[int, Chain] = {}
        self._last = -1

    def register(self, ts: int) -> Txn:
        if ts <= self._last:
            raise ValueError("timestamps must increase")
        self._last = ts
        t = self.txns[ts] = Txn(ts)
        return t

    def chain(self, key: int) -> Chain:
        c = self.chains.get(key)
        if c is None:
            c = self.chains[key] = Chain()
        return c

    def _require_active(self, txn: Txn) -> None:
        if txn.status is not Status.ACTIVE:
            raise TxnAborted(txn.ts, txn.reason or f"transaction is {txn.status.value}")

    def peek(self, txn: Txn, key: int) -> str:
        """Where a read would be served from: ``own``, ``version`` or ``base``."""
        c = self.chains.get(key)
        if c is None:
            return "base"
        if c.own(txn.ts) is not None:
            return "own"
        return "version" if c.older_than(txn.ts) is not None else "base"

    def read(self, txn: Txn, key: int) -> Version | None:
        """Apply read bookkeeping. Returns the epoch version read, or None for the base."""
        self._require_active(txn)
        c = self.chain(key)
        own = c.own(txn.ts)
        if own is not None:
            return own
        v = c.older_than(txn.ts)
        if v is None:
            c.base_marker = max(c.base_marker, txn.ts)
            return None
        v.marker = max(v.marker, txn.ts)
        writer = self.txns[v.writer_ts]
        txn.deps.add(writer.ts)
        writer.dependents.add(txn.ts)
        return v

    def write(self, txn: Txn, key: int, value: bytes) -> list[Txn]:
        """Insert or overwrite ``txn``'s version. Returns aborted txns (empty on success)."""
        self._require_active(txn)
        c = self.chain(key)
        own = c.own(txn.ts)
        if own is not None:
            if own.marker > txn.ts:
                return self.abort(txn, f"rewrite of key {key} after a younger read")
            own.value = value
            txn.writes[key] = value
            return []
        pred = c.older_than(txn.ts)
        marker = pred.marker if pred is not None else c.base_marker
        if marker > txn.ts:
            return self.abort(txn, f"write to key {key} after a younger read (marker {marker})")
        bisect.insort(c.versions, Version(txn.ts, value), key=lambda v: v.writer_ts)
        txn.writes[key] = value
        return []

    def complete(self, txn: Txn) -> None:
        self._require_active(txn)
        txn.status = Status.COMPLETED

    def abort(self, txn: Txn, reason: str) -> list[Txn]:
        """Abort ``txn`` and everything that observed its writes. Returns newly aborted txns."""
        out = []
        stack = [(txn, reason)]
        while stack:
            t, why = stack.pop()
            if t.status in (Status.ABORTED, Status.COMMITTED):
                continue
            t.status = Status.ABORTED
            t.reason = why
            out.append(t)
            for key in t.writes:
                c = self.chains[key]
                c.versions = [v for v in c.versions if v.writer_ts != t.ts]
            for d in sorted(t.dependents):
                stack.append((self.txns[d], f"cascade from {t.ts}"))
        return out

    def resolve_epoch(self) -> tuple[list[Txn], list[Txn]]:
        """Abort unfinished txns and close over dependencies.

        Returns (surviving completed txns, txns aborted by this call). The
        caller marks survivors committed once the epoch is durable.
        """
        aborted: list[Txn] = []
        for t in sorted(self.txns.values(), key=lambda t: t.ts):
            if t.status is Status.ACTIVE:
                aborted += self.abort(t, "unfinished at epoch end")
        changed = True
        while changed:
            changed = False
            for t in self.txns.values():
                if t.status is Status.COMPLETED and any(self.txns[d].status is Status.ABORTED for d in t.deps):
                    aborted += self.abort(t, "dependency aborted")
                    changed = True
        survivors = sorted((t for t in self.txns.values() if t.status is Status.COMPLETED), key=lambda t: t.ts)
        return survivors, aborted

    def dirty_keys(self) -> list[int]:
        return sorted(k for k, c in self.chains.items()
                      if any(self.txns[v.writer_ts].status is not Status.ABORTED for v in c.versions))

    def last_version(self, key: int) -> Version | None:
        vs = [v for v in self.chains[key].versions if self.txns[v.writer_ts].status is not Status.ABORTED]
        return vs[-1] if vs else None


__all__ = ["Mvtso", "Txn", "Version", "Chain", "Status", "make_ts", "split_ts"]
