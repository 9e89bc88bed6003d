"""Offline serializability checks over committed histories.

Two independent checks:

* a direct serialization graph (write-read, write-write and read-write
  anti-dependency edges) must be acyclic; a cycle is returned as witness;
* replaying the committed transactions serially in timestamp order must
  reproduce every observed read.

Version order for a key is the timestamp order of its committed writers.
Writer timestamp ``0`` denotes the initial (never written) state.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import networkx as nx

INITIAL = 0


@dataclass(frozen=True)
class HistoryTxn:
    ts: int
    reads: tuple[tuple[int, int], ...]  # (key, writer ts)
    writes: tuple[tuple[int, bytes], ...]


@dataclass
class Verdict:
    serializable: bool
    cycle: list[tuple[int, int, str]] = field(default_factory=list)
    replay_ok: bool = True
    replay_errors: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.serializable and self.replay_ok


def _norm(history: Iterable) -> list[HistoryTxn]:
    return [HistoryTxn(t.ts, tuple(t.reads), tuple(t.writes)) for t in history]


def serialization_graph(history: Iterable) -> nx.DiGraph:
    txns = _norm(history)
    g = nx.DiGraph()
    g.add_nodes_from(t.ts for t in txns)
    writers: dict[int, list[int]] = defaultdict(list)
    for t in txns:
        for key, _ in t.writes:
            writers[key].append(t.ts)
    for key in writers:
        writers[key].sort()

    def edge(a: int, b: int, kind: str) -> None:
        if a != b:
            g.add_edge(a, b, kind=kind)

    for key, ws in writers.items():
        for a, b in zip(ws, ws[1:]):
            edge(a, b, "ww")
    for t in txns:
        for key, w in t.reads:
            if w != INITIAL:
                edge(w, t.ts, "wr")
            ws = writers.get(key, [])
            # the first committed writer after the version read
            nxt = next((x for x in ws if x > w), None) if w != t.ts else None
            if nxt is not None:
                edge(t.ts, nxt, "rw")
    return g


def check_dsg(history: Iterable) -> tuple[bool, list[tuple[int, int, str]]]:
    g = serialization_graph(history)
    try:
        cyc = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        return True, []
    return False, [(a, b, g.edges[a, b]["kind"]) for a, b in cyc]


def replay_check(history: Iterable, initial: dict[int, int] | None = None) -> list[str]:
    """Serial replay in timestamp order; returns mismatching reads.

    ``initial`` maps keys to the writer timestamp visible before the history.
    """
    state: dict[int, int] = dict(initial or {})
    errors = []
    for t in sorted(_norm(history), key=lambda t: t.ts):
        own = {k for k, _ in t.writes}
        for key, w in t.reads:
            if w == t.ts and key in own:
                continue
            have = state.get(key, INITIAL)
            if have != w:
                errors.append(f"txn {t.ts} read key {key} from {w}, serial order gives {have}")
        for key, _ in t.writes:
            state[key] = t.ts
    return errors


def check(history: Sequence, initial: dict[int, int] | None = None) -> Verdict:
    ok, cyc = check_dsg(history)
    errs = replay_check(history, initial)
    return Verdict(ok, cyc, not errs, errs)


def final_state(history: Iterable) -> dict[int, tuple[bytes, int]]:
    """Committed value and writer per key after replaying ``history`` in ts order."""
    out: dict[int, tuple[bytes, int]] = {}
    for t in sorted(_norm(history), key=lambda t: t.ts):
        for key, val in t.writes:
            out[key] = (val, t.ts)
    return out


__all__ = ["HistoryTxn", "Verdict", "serialization_graph", "check_dsg", "replay_check", "check", "final_state"]
