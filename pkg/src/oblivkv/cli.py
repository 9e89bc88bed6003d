"""Command-line entry point: ``oblivkv <subcommand>``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .config import ProxyConfig, from_mapping, load_config, small_config, to_mapping
from .crypto import ProxyKeys
from .errors import OblivError
from .observer import Trace, leaf_uniformity_test, slot_reuse_check, workload_independence_test
from .runner import CrashSchedule, deploy, run
from .workload import KINDS, WorkloadSpec

log = logging.getLogger("oblivkv")


def _coerce(v: str):
    for cast in (int, float):
        try:
            return cast(v)
        except ValueError:
            pass
    if v.lower() in ("true", "false"):
        return v.lower() == "true"
    if v.lower() in ("none", "null"):
        return None
    return v


def _config(args) -> ProxyConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "small", False):
        cfg = small_config()
    else:
        cfg = ProxyConfig().validate()
    overrides = {}
    for item in getattr(args, "set", None) or []:
        k, _, v = item.partition("=")
        overrides[k] = _coerce(v)
    if overrides:
        cfg = from_mapping({**to_mapping(cfg), **overrides})
    return cfg


def _hostport(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    return host or "127.0.0.1", int(port)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file (keys: N Z S A L R b_read b_write delta ...)")
    p.add_argument("--small", action="store_true", help="compact test deployment (L=4, R=3, b=8)")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")


def _add_workload_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--workload", choices=KINDS, default="uniform")
    p.add_argument("--keys", default=None, metavar="LO:HI", help="key range (default: whole key space)")
    p.add_argument("--ops", type=int, default=4, help="operations per transaction")
    p.add_argument("--write-ratio", type=float, default=0.5)
    p.add_argument("--theta", type=float, default=0.99, help="zipfian skew")
    p.add_argument("--seed", type=int, default=0, help="workload seed")


def _spec(args, cfg: ProxyConfig) -> WorkloadSpec:
    lo, hi = 0, cfg.geometry.N
    if args.keys:
        a, _, b = args.keys.partition(":")
        lo, hi = int(a), int(b)
    return WorkloadSpec(args.workload, lo, hi, args.ops, args.write_ratio, args.theta, seed=args.seed)


def _emit(report, args) -> None:
    text = json.dumps(report.to_dict(), indent=2, default=str) if args.json else report.to_text()
    if args.report:
        Path(args.report).write_text(text)
    print(text, end="" if text.endswith("\n") else "\n")


# -- subcommands -----------------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = _config(args)
    spec = _spec(args, cfg)
    dep = _deployment(args, cfg, fresh=True)
    crashes = _schedule(args.crashes, cfg) if args.crashes else None
    report = run(cfg, spec, epochs=args.epochs, sessions=args.sessions, txns=args.txns,
                 crashes=crashes, dep=dep, trace_file=args.trace)
    _emit(report, args)
    return 0 if report.ok else 1


def _schedule(text: str, cfg: ProxyConfig) -> CrashSchedule:
    if text.startswith("random:"):
        _, seed, n, epochs = text.split(":")
        return CrashSchedule.random(int(seed), int(n), int(epochs), cfg.epoch.R)
    return CrashSchedule.parse(text)


def _deployment(args, cfg: ProxyConfig, fresh: bool):
    transport = None
    if args.storage:
        from .storage import TcpTransport
        transport = TcpTransport(*_hostport(args.storage))
    keys = counter = None
    if args.state_dir:
        d = Path(args.state_dir)
        d.mkdir(parents=True, exist_ok=True)
        counter = d / "counter.json"
        if fresh:
            if counter.exists():
                raise OblivError(f"{d} already holds a deployment; use 'recover'")
            keys = ProxyKeys.generate(cfg.seed)
            keys.save(d / "keys.json")
            (d / "config.json").write_text(json.dumps(to_mapping(cfg), indent=2))
        else:
            keys = ProxyKeys.load(d / "keys.json")
    return deploy(cfg, transport=transport, counter_path=counter, keys=keys)


def cmd_recover(args) -> int:
    d = Path(args.state_dir)
    cfg = load_config(args.config) if args.config else from_mapping(json.loads((d / "config.json").read_text()))
    dep = _deployment(args, cfg, fresh=False)
    before = dep.counter.read()
    spec = _spec(args, cfg)
    report = run(cfg, spec, epochs=before.epoch + args.epochs, sessions=args.sessions, txns=args.txns,
                 dep=dep, trace_file=args.trace, resume=True)
    print(f"recovered: committed epoch {before.epoch}, {before.batch} logged read batches replayed")
    _emit(report, args)
    return 0 if report.ok else 1


def cmd_bench(args) -> int:
    from .bench import parallel_vs_sequential, root_write_dedup

    r = parallel_vs_sequential(args.accesses, args.latency_ms, args.L, args.workers, args.seed)
    d = root_write_dedup()
    out = {
        "latency_ms": r.latency_ms, "accesses": r.accesses, "workers": args.workers,
        "sequential_s": r.sequential_s, "parallel_s": r.parallel_s,
        "sequential_ops_per_s": r.sequential_ops, "parallel_ops_per_s": r.parallel_ops,
        "speedup": r.speedup, "storage_reads": r.storage_reads, "bucket_writes": r.bucket_writes,
        "evictions_per_epoch": d.evictions, "oracle_root_writes": d.oracle_root_writes,
        "dedup_root_writes": d.parallel_root_writes,
    }
    if args.kernels:
        from .kernels.bench import benchmark
        out["kernels"] = benchmark(reps=5)
    print(json.dumps(out, indent=2))
    return 0


def cmd_crash_sweep(args) -> int:
    cfg = _config(args) if (args.config or args.set) else small_config()
    spec = WorkloadSpec(args.workload, 0, cfg.geometry.N, seed=args.seed)
    schedules = CrashSchedule.sweep(args.epochs, cfg.epoch.R, nested=args.nested)
    failures = 0
    t0 = time.perf_counter()
    for sch in schedules:
        cp = sch.points[0]
        rep = run(cfg, spec, epochs=args.epochs + 1, sessions=args.sessions, crashes=sch)
        ok = rep.ok and rep.crashes >= 1 and rep.recoveries
        failures += not ok
        rec = rep.recoveries[0] if rep.recoveries else None
        print(f"epoch={cp.epoch} hook={cp.hook:2d} nested={cp.nested or '-':15s} "
              f"crashes={rep.crashes} replayed={rec.replayed_batches if rec else '-'} "
              f"{'ok' if ok else 'FAIL'}")
    print(f"{len(schedules) - failures}/{len(schedules)} crash points ok in {time.perf_counter() - t0:.1f}s")
    return 1 if failures else 0


def cmd_check_trace(args) -> int:
    tr = Trace.load(args.trace)
    events = tr.events
    reuse = slot_reuse_check(events)
    u = leaf_uniformity_test(events, args.L)
    out = {"events": len(events), "slot_reuse": len(reuse), "uniformity_p": u.p_value,
           "uniformity_samples": u.samples, "uniformity_conclusive": u.conclusive}
    ok = not reuse and (u.passed() or not u.conclusive)
    if args.against:
        v = workload_independence_test(events, Trace.load(args.against).events, args.L)
        out.update(structure_equal=v.structure_equal, leaf_two_sample_p=v.leaf_test.p_value, volume_p=v.volume_p)
        ok &= v.passed()
    print(json.dumps(out, indent=2))
    return 0 if ok else 1


def cmd_serve_storage(args) -> int:
    from .storage import StorageServer, serve

    storage = StorageServer(args.dir)
    srv = serve(storage, args.host, args.port)
    host, port = srv.server_address[:2]
    print(f"storage listening on {host}:{port}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        srv.shutdown()
        storage.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="oblivkv", description="Oblivious transactional key-value store harness")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("run", help="run a workload against proxy + storage")
    _add_config_args(p)
    _add_workload_args(p)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--sessions", type=int, default=8)
    p.add_argument("--txns", type=int, default=None, help="transactions per session")
    p.add_argument("--crashes", default=None, help="EPOCH:HOOK[:NESTED],... or random:SEED:N:EPOCHS")
    p.add_argument("--storage", default=None, metavar="HOST:PORT", help="remote storage (default in-process)")
    p.add_argument("--state-dir", default=None, help="persist keys, counter and config here")
    p.add_argument("--trace", default=None, help="write the adversary trace (TSV)")
    p.add_argument("--report", default=None, help="also write the report to this file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("recover", help="recover a crashed deployment and keep running")
    p.add_argument("--state-dir", required=True)
    p.add_argument("--storage", required=True, metavar="HOST:PORT")
    p.add_argument("--config", default=None)
    _add_workload_args(p)
    p.add_argument("--epochs", type=int, default=1, help="epochs to run after recovery")
    p.add_argument("--sessions", type=int, default=4)
    p.add_argument("--txns", type=int, default=None)
    p.add_argument("--trace", default=None)
    p.add_argument("--report", default=None)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_recover)

    p = sub.add_parser("bench", help="parallel vs sequential execution under latency")
    p.add_argument("--latency-ms", type=float, default=5.0)
    p.add_argument("--accesses", type=int, default=64)
    p.add_argument("--L", type=int, default=5)
    p.add_argument("--workers", type=int, default=64)
    p.add_argument("--seed", type=int, default=11)
    p.add_argument("--kernels", action="store_true", help="also time numba vs numpy kernels")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("crash-sweep", help="crash at every hook of the first epochs")
    _add_config_args(p)
    p.add_argument("--epochs", type=int, default=3)
    p.add_argument("--nested", action="store_true", help="also crash inside each recovery")
    p.add_argument("--workload", choices=KINDS, default="hotspot")
    p.add_argument("--sessions", type=int, default=8)
    p.add_argument("--seed", type=int, default=1)
    p.set_defaults(fn=cmd_crash_sweep)

    p = sub.add_parser("check-trace", help="run the observer's tests on an exported trace")
    p.add_argument("trace")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--against", default=None, help="second trace for the independence test")
    p.set_defaults(fn=cmd_check_trace)

    p = sub.add_parser("serve-storage", help="serve the storage protocol over TCP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7070)
    p.add_argument("--dir", default=None, help="journal directory (default: memory only)")
    p.set_defaults(fn=cmd_serve_storage)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except OblivError as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
