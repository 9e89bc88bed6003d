"""Run harness: client sessions, crash schedules, recovery checks, reports.

Sessions are driven from one control thread, so a run is deterministic given
the config, the workload seeds and the crash schedule (the storage I/O inside
an epoch still fans out on the executor's thread pool).
"""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import serializability
from .config import ProxyConfig, to_mapping
from .crypto import ProxyKeys
from .durability import TrustedCounter
from .errors import Crash, TxnAborted
from .mvtso import split_ts
from .observer import Trace, leaf_uniformity_test, slot_reuse_check
from .proxy import RECOVERY_HOOKS, Proxy, epoch_hooks
from .storage import InProcessTransport, StorageClient, StorageServer
from .workload import Read, Workload, WorkloadSpec, Write


# -- crash schedules -------------------------------------------------------------------


@dataclass(frozen=True)
class CrashPoint:
    epoch: int
    hook: int  # index into epoch_hooks(R)
    nested: str | None = None  # recovery hook to crash at during the first recovery


@dataclass
class CrashSchedule:
    points: list[CrashPoint] = field(default_factory=list)

    @classmethod
    def sweep(cls, epochs: int, R: int, nested: bool = False) -> list["CrashSchedule"]:
        """Every hook of epochs 1..epochs, each as its own single-crash schedule."""
        out = []
        variants = (None,) + (RECOVERY_HOOKS if nested else ())
        for e in range(1, epochs + 1):
            for h in range(len(epoch_hooks(R))):
                for v in variants:
                    out.append(cls([CrashPoint(e, h, v)]))
        return out

    @classmethod
    def random(cls, seed: int, n: int, epochs: int, R: int) -> "CrashSchedule":
        rng = np.random.default_rng(seed)
        hooks = len(epoch_hooks(R))
        picks = sorted({(int(rng.integers(1, epochs + 1)), int(rng.integers(0, hooks))) for _ in range(n)})
        return cls([CrashPoint(e, h) for e, h in picks])

    @classmethod
    def parse(cls, text: str) -> "CrashSchedule":
        """``"2:5,3:0:recover-read"`` or ``"random:SEED:N:EPOCHS"`` (the latter needs R, see ``resolve``)."""
        pts = []
        for part in filter(None, (p.strip() for p in text.split(","))):
            bits = part.split(":")
            pts.append(CrashPoint(int(bits[0]), int(bits[1]), bits[2] if len(bits) > 2 else None))
        return cls(pts)


class CrashInjector:
    """Crash hook: raises ``Crash`` at scheduled points, each at most once."""

    def __init__(self, schedule: CrashSchedule, R: int):
        self.hooks = epoch_hooks(R)
        self.pending = list(schedule.points)
        self.fired: list[tuple[str, int, int]] = []
        self.armed_nested: str | None = None

    def __call__(self, point: str, epoch: int, batch: int) -> None:
        if point in RECOVERY_HOOKS:
            if self.armed_nested == point:
                self.armed_nested = None
                self.fired.append((point, epoch, batch))
                raise Crash(point, epoch, batch)
            return
        for cp in self.pending:
            if cp.epoch == epoch and self.hooks[cp.hook] == (point, batch):
                self.pending.remove(cp)
                self.armed_nested = cp.nested
                self.fired.append((point, epoch, batch))
                raise Crash(point, epoch, batch)


# -- sessions --------------------------------------------------------------------------


@dataclass
class TxnRecord:
    ts: int
    begin_wall: float
    end_wall: float = 0.0
    committed: bool | None = None


class Session:
    """One client issuing transactions back to back."""

    def __init__(self, workload: Workload, budget: int):
        self.workload = workload
        self.budget = budget
        self.records: list[TxnRecord] = []
        self.commit_futures: list[tuple[TxnRecord, object]] = []
        self.aborted_early = 0
        self._reset()

    def _reset(self) -> None:
        self.txn = None
        self.gen = None
        self.fut = None
        self.rec = None

    def crash(self) -> None:
        if self.rec is not None:
            self.aborted_early += 1
        self._reset()

    @property
    def done(self) -> bool:
        return self.budget <= 0 and self.txn is None

    def advance(self, proxy) -> None:
        """Run until blocked on a storage read, or one transaction has been submitted."""
        if self.txn is None:
            if self.budget <= 0:
                return
            self.budget -= 1
            try:
                self.txn = proxy.begin()
            except TxnAborted:
                self.budget += 1
                return
            self.gen = self.workload.next_txn()()
            self.rec = TxnRecord(self.txn.ts, time.perf_counter())
            self.records.append(self.rec)
            send = None
        else:
            if self.fut is None or not self.fut.done():
                return
            try:
                send = self.fut.result()[0]
            except TxnAborted:
                self._finish_aborted()
                return
            self.fut = None
        while True:
            try:
                op = self.gen.send(send)
            except StopIteration:
                fut = proxy.commit(self.txn)
                self.commit_futures.append((self.rec, fut))
                self._reset()
                return
            send = None
            try:
                if isinstance(op, Read):
                    f = proxy.read(self.txn, op.key)
                    if not f.done():
                        self.fut = f
                        return
                    send = f.result()[0]
                elif isinstance(op, Write):
                    proxy.write(self.txn, op.key, op.value)
            except TxnAborted:
                self._finish_aborted()
                return

    def _finish_aborted(self) -> None:
        self.rec.committed = False
        self.rec.end_wall = time.perf_counter()
        self.aborted_early += 1
        self._reset()

    def settle(self) -> None:
        """Collect decided commit futures."""
        keep = []
        for rec, fut in self.commit_futures:
            if not fut.done():
                keep.append((rec, fut))
                continue
            rec.end_wall = time.perf_counter()
            try:
                rec.committed = bool(fut.result())
            except TxnAborted:
                rec.committed = False
        self.commit_futures = keep


# -- reports ---------------------------------------------------------------------------


@dataclass
class RecoveryCheck:
    crashed_at: tuple
    committed_epoch: int
    replayed_batches: int
    committed_readable: bool
    no_crashed_writes: bool
    replay_verbatim: bool
    nested: bool = False
    state_digest: str = ""  # logical database right after recovery


@dataclass
class RunReport:
    config: dict
    workload: dict
    epochs: int = 0
    txns: int = 0
    committed: int = 0
    aborted: int = 0
    crashes: int = 0
    recoveries: list[RecoveryCheck] = field(default_factory=list)
    serializable: bool = True
    replay_equivalent: bool = True
    cycle: list = field(default_factory=list)
    slot_reuse: int = 0
    uniformity_p: float = float("nan")
    uniformity_conclusive: bool = False
    stash_high: int = 0
    elapsed_s: float = 0.0
    throughput_tps: float = 0.0
    latency_mean_ms: float = float("nan")
    latency_p50_ms: float = float("nan")
    latency_p99_ms: float = float("nan")
    durability_ok: bool = True
    final_state_ok: bool = True
    trace_file: str | None = None

    @property
    def ok(self) -> bool:
        return (self.serializable and self.replay_equivalent and self.slot_reuse == 0
                and self.durability_ok and self.final_state_ok)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ok"] = self.ok
        return d

    def to_text(self) -> str:
        lines = []
        for k, v in self.to_dict().items():
            if k == "recoveries":
                lines.append(f"recoveries: {len(v)}")
                for r in v:
                    lines.append("  - " + ", ".join(f"{a}={b}" for a, b in r.items()))
            elif isinstance(v, dict):
                lines.append(f"{k}: " + json.dumps(v, sort_keys=True))
            elif isinstance(v, float):
                lines.append(f"{k}: {v:.4g}")
            else:
                lines.append(f"{k}: {v}")
        return "\n".join(lines) + "\n"


# -- the harness -----------------------------------------------------------------------


@dataclass
class Deployment:
    cfg: ProxyConfig
    server: StorageServer | None
    client: StorageClient
    keys: ProxyKeys
    counter: TrustedCounter
    trace: Trace


def deploy(cfg: ProxyConfig, transport=None, trace: Trace | None = None,
           counter_path: str | Path | None = None, storage_dir: str | Path | None = None,
           keys: ProxyKeys | None = None) -> Deployment:
    """In-process storage unless ``transport`` is given."""
    trace = trace if trace is not None else Trace()
    server = None
    if transport is None:
        server = StorageServer(storage_dir)
        transport = InProcessTransport(server)
    client = StorageClient(transport, trace)
    return Deployment(cfg, server, client, keys or ProxyKeys.generate(cfg.seed), TrustedCounter(counter_path), trace)


def recover_until_stable(dep: Deployment, hook, report: RunReport | None = None) -> Proxy:
    """Recover, absorbing crashes injected during recovery itself."""
    while True:
        try:
            return Proxy.recover(dep.cfg, dep.client, dep.keys, dep.counter, dep.trace, hook)
        except Crash:
            if report is not None:
                report.crashes += 1


def run(cfg: ProxyConfig, spec: WorkloadSpec, *, epochs: int = 10, sessions: int = 8,
        txns: int | None = None, crashes: CrashSchedule | None = None, dep: Deployment | None = None,
        check_recovery: bool = True, trace_file: str | Path | None = None, resume: bool = False) -> RunReport:
    """Drive ``sessions`` clients until the counter reaches epoch ``epochs``.

    ``txns`` caps the transactions each session issues (default: unbounded).
    ``resume`` recovers from an existing deployment instead of formatting.
    """
    dep = dep or deploy(cfg)
    injector = CrashInjector(crashes or CrashSchedule(), cfg.epoch.R)
    report = RunReport(config=to_mapping(cfg), workload=spec.to_mapping())
    budget = txns if txns is not None else 1 << 60
    sess = [Session(Workload(spec, stream=i + 1), budget) for i in range(sessions)]
    if resume:
        proxy = recover_until_stable(dep, injector, report)
        base = proxy.debug_state()  # committed by earlier sessions
    else:
        proxy = Proxy.create(cfg, dep.client, dep.keys, dep.counter, dep.trace, injector)
        base = {}
    history: list = []
    t0 = time.perf_counter()
    seen_outcomes = 0
    stash_high = 0
    while dep.counter.read().epoch < epochs:
        try:
            for s in sess:
                s.advance(proxy)
            proxy.step()
        except Crash as crash:
            report.crashes += 1
            stash_high = max(stash_high, proxy.stash_high)
            for s in sess:
                s.crash()
                s.settle()
            point = (crash.point, crash.epoch, crash.batch)
            nested = injector.armed_nested is not None
            pre_epoch = dep.counter.read().epoch
            dead = proxy
            proxy = recover_until_stable(dep, injector, report)
            seen_outcomes = 0
            if check_recovery:
                report.recoveries.append(verify_recovery(proxy, history, point, nested, dead, base))
            continue
        if len(proxy.outcomes) > seen_outcomes:
            for o in proxy.outcomes[seen_outcomes:]:
                history.extend(o.history)
            seen_outcomes = len(proxy.outcomes)
        for s in sess:
            s.settle()
        if all(s.done for s in sess) and not any(s.commit_futures for s in sess):
            break
    # drain commit decisions of the last epoch
    report.elapsed_s = time.perf_counter() - t0
    stash_high = max(stash_high, proxy.stash_high)
    for s in sess:
        s.settle()
    recs = [r for s in sess for r in s.records]
    report.epochs = dep.counter.read().epoch
    report.txns = len(recs)
    report.committed = sum(1 for r in recs if r.committed)
    report.aborted = report.txns - report.committed
    lat = np.array([r.end_wall - r.begin_wall for r in recs if r.committed], dtype=float) * 1e3
    if lat.size:
        report.latency_mean_ms = float(lat.mean())
        report.latency_p50_ms = float(np.percentile(lat, 50))
        report.latency_p99_ms = float(np.percentile(lat, 99))
    report.throughput_tps = report.committed / report.elapsed_s if report.elapsed_s > 0 else 0.0
    verdict = serializability.check(history, {k: ts for k, (_, ts) in base.items()})
    report.serializable, report.replay_equivalent, report.cycle = verdict.serializable, verdict.replay_ok, verdict.cycle
    events = dep.trace.events
    report.slot_reuse = len(slot_reuse_check(events))
    u = leaf_uniformity_test(events, cfg.geometry.L)
    report.uniformity_p, report.uniformity_conclusive = u.p_value, u.conclusive
    report.stash_high = stash_high
    report.durability_ok = all(r.committed_readable and r.no_crashed_writes and r.replay_verbatim
                               for r in report.recoveries)
    report.final_state_ok = state_matches(proxy.debug_state(), history, base)
    if trace_file is not None:
        dep.trace.export(trace_file)
        report.trace_file = str(trace_file)
    proxy.close()
    return report


def expected_state(history, base: dict | None = None) -> dict[int, tuple[bytes, int]]:
    return {**(base or {}), **serializability.final_state(history)}


def state_matches(state: dict[int, tuple[bytes, int]], history, base: dict | None = None) -> bool:
    return state == expected_state(history, base)


def verify_recovery(proxy: Proxy, history, point: tuple, nested: bool, crashed: Proxy | None = None,
                    base: dict | None = None) -> RecoveryCheck:
    """Durability checks right after a recovery.

    * every key holds the value of its last committed writer;
    * no value was written by a transaction of an uncommitted epoch;
    * the reads issued during replay equal the logged reads, in order, and
      every batch the crashed proxy executed read exactly its logged slots.
    """
    rep = proxy.recovery
    state = proxy.debug_state()
    expected = expected_state(history, base)
    readable = all(state.get(k) == v for k, v in expected.items())
    no_crashed = all(split_ts(ts)[0] <= rep.epoch for _, ts in state.values()) and set(state) == set(expected)
    logged = [(b, s) for log in rep.logs for b, s, _ in log.reads]
    verbatim = logged == rep.replayed
    if crashed is not None:
        events = proxy.trace.events
        by_seq = {ev.seq: ev for ev in events}
        for e, j, lo, hi in crashed.executed:
            if e != rep.epoch + 1 or j >= len(rep.logs):
                continue
            seen = sorted((by_seq[q].bucket, by_seq[q].slot) for q in range(lo, hi)
                          if q in by_seq and by_seq[q].kind == "read")
            verbatim &= seen == sorted((b, s) for b, s, _ in rep.logs[j].reads)
    return RecoveryCheck(point, rep.epoch, rep.batches, readable, no_crashed, verbatim, nested, state_digest(state))


def state_digest(state: dict[int, tuple[bytes, int]]) -> str:
    h = hashlib.sha256()
    for k in sorted(state):
        v, ts = state[k]
        h.update(b"%d:%d:%d:" % (k, ts, len(v)) + v)
    return h.hexdigest()[:16]


__all__ = [
    "CrashPoint", "CrashSchedule", "CrashInjector", "Session", "RunReport", "RecoveryCheck",
    "Deployment", "deploy", "run", "recover_until_stable", "verify_recovery", "expected_state", "state_matches", "state_digest",
]
