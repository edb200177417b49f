"""Command line: daemons (manager, benefactor), file verbs (put, get, ls,
rm, stat), policy and GC controls, and the benchmark drivers."""

from __future__ import annotations

import argparse
import json
import sys
import tempfile
import time
from pathlib import Path

from . import chunking
from .client import ManagerClient, WritePolicy, open_write, restart_fetch
from .client.rpc import BenefactorClient
from .config import Config
from .errors import (
    IntegrityError,
    NotFoundError,
    StorageError,
    UnavailableError,
    UsageError,
)

EXIT_CODES = [
    (UsageError, 2),
    (NotFoundError, 3),
    (IntegrityError, 4),
    (UnavailableError, 5),
    (StorageError, 1),
]


def _size(text: str) -> int:
    text = text.strip().lower()
    units = {"k": 1 << 10, "m": 1 << 20, "g": 1 << 30}
    if text and text[-1] in units:
        return int(float(text[:-1]) * units[text[-1]])
    return int(text)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scavstore")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("manager", help="run the metadata manager")
    p.add_argument("--listen", default="127.0.0.1:7070")
    p.add_argument("--journal", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("benefactor", help="run a storage donor daemon")
    p.add_argument("--manager", required=True)
    p.add_argument("--root", required=True)
    p.add_argument("--capacity", default="8g")
    p.add_argument("--listen", default="127.0.0.1:0")
    p.add_argument("--heartbeat-interval", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("-o", "--override", action="append", default=[], metavar="KEY=VALUE")

    p = sub.add_parser("put", help="store a file as application.node.timestep")
    p.add_argument("file")
    p.add_argument("dataset")
    p.add_argument("--manager", required=True)
    p.add_argument("--protocol", default="sliding_window",
                   choices=("sliding_window", "incremental", "complete_local"))
    p.add_argument("--semantics", default="optimistic",
                   choices=("optimistic", "pessimistic"))
    p.add_argument("--stripe", type=int, default=4)
    p.add_argument("--replication", type=int, default=1)
    p.add_argument("--chunk-size", default="1m")
    p.add_argument("--buffer", default="64m")
    p.add_argument("--temp-file-limit", default="16m")
    p.add_argument("--dedup", default="off", choices=("off", "fsch", "cbch"))

    p = sub.add_parser("get", help="fetch a dataset (or the latest of an application)")
    p.add_argument("target", help="application.node.timestep or application")
    p.add_argument("out")
    p.add_argument("--manager", required=True)
    p.add_argument("--version", type=int, default=None)

    p = sub.add_parser("ls", help="list the namespace")
    p.add_argument("prefix", nargs="?", default="")
    p.add_argument("--manager", required=True)
    p.add_argument("--benefactors", action="store_true")

    p = sub.add_parser("rm", help="delete a dataset or application folder")
    p.add_argument("target")
    p.add_argument("--manager", required=True)

    p = sub.add_parser("stat", help="show one version's chunk map")
    p.add_argument("target")
    p.add_argument("--manager", required=True)
    p.add_argument("--version", type=int, default=None)

    p = sub.add_parser("policy-set", help="set an application's lifecycle policy")
    p.add_argument("application")
    p.add_argument("mode", choices=("none", "replace", "purge"))
    p.add_argument("--purge-after", default="1h")
    p.add_argument("--manager", required=True)

    p = sub.add_parser("gc-now", help="run a GC round on every benefactor")
    p.add_argument("--manager", required=True)

    p = sub.add_parser("bench", help="benchmarks")
    bench_sub = p.add_subparsers(dest="bench_command", required=True)

    b = bench_sub.add_parser("write", help="protocol/stripe sweep on a local cluster")
    b.add_argument("--manager", default=None, help="reuse a running cluster")
    b.add_argument("--benefactors", type=int, default=4)
    b.add_argument("--size", default="64m")
    b.add_argument("--runs", type=int, default=20)
    b.add_argument("--stripes", default="4")
    b.add_argument("--buffers", default="64m")
    b.add_argument("--protocols", default="sliding_window,incremental,complete_local")
    b.add_argument("--dedup", default="off")
    b.add_argument("--versions", type=int, default=1)
    b.add_argument("--mutation", type=float, default=0.0)
    b.add_argument("--csv", default=None, help="write per-session records here")

    b = bench_sub.add_parser("stress", help="staggered multi-client load")
    b.add_argument("--manager", default=None)
    b.add_argument("--benefactors", type=int, default=20)
    b.add_argument("--clients", type=int, default=7)
    b.add_argument("--files", type=int, default=10)
    b.add_argument("--size", default="16m")
    b.add_argument("--stagger", type=float, default=1.0)
    b.add_argument("--csv", default=None)

    b = bench_sub.add_parser("chunking", help="compare compiled and pure scan backends")
    b.add_argument("--size", default="256m")
    b.add_argument("--runs", type=int, default=5)
    b.add_argument("--json", action="store_true")

    return parser


def cmd_manager(args) -> int:
    from .manager import ManagerServer

    cfg = Config.load(args.config, args.override)
    host, port = args.listen.rsplit(":", 1)
    server = ManagerServer(cfg, host=host, port=int(port), journal_path=args.journal)
    print(f"manager listening on {server.address}", flush=True)
    server.serve_forever()
    return 0


def cmd_benefactor(args) -> int:
    from .benefactor import BenefactorDaemon

    overrides = list(args.override)
    if args.heartbeat_interval:
        overrides.append(f"heartbeat_interval={args.heartbeat_interval}")
    cfg = Config.load(args.config, overrides)
    host, port = args.listen.rsplit(":", 1)
    daemon = BenefactorDaemon(
        args.root,
        _size(args.capacity),
        manager_address=args.manager,
        host=host,
        port=int(port),
        config=cfg,
    )
    print(f"benefactor listening on {daemon.address}", flush=True)
    daemon.serve_forever()
    return 0


def cmd_put(args) -> int:
    policy = WritePolicy(
        protocol=args.protocol,
        semantics=args.semantics,
        stripe_width=args.stripe,
        replication=args.replication,
        chunk_size=_size(args.chunk_size),
        buffer_bytes=_size(args.buffer),
        temp_file_limit=_size(args.temp_file_limit),
        dedup=args.dedup,
    )
    session = open_write(args.manager, args.dataset, policy)
    with open(args.file, "rb") as fh:
        while True:
            block = fh.read(4 << 20)
            if not block:
                break
            session.write(block)
    version, metrics = session.close_commit()
    print(
        f"{args.dataset} committed as v{version}: {metrics.bytes_logical} bytes, "
        f"{metrics.bytes_uploaded} uploaded, oab {metrics.oab / 2**20:.1f} MB/s"
    )
    return 0


def cmd_get(args) -> int:
    if "." in args.target and args.version is None:
        from .client import open_read

        with open_read(args.manager, dataset=args.target) as handle, open(
            args.out, "wb"
        ) as fh:
            while True:
                block = handle.read(8 << 20)
                if not block:
                    break
                fh.write(block)
        print(f"{args.target} -> {args.out}")
        return 0
    if args.version is not None:
        from .client import open_read

        app = args.target.split(".")[0]
        with open_read(args.manager, application=app, version=args.version) as handle:
            with open(args.out, "wb") as fh:
                while True:
                    block = handle.read(8 << 20)
                    if not block:
                        break
                    fh.write(block)
        print(f"{app} v{args.version} -> {args.out}")
        return 0
    name, version, size = restart_fetch(args.manager, args.target, args.out)
    print(f"{name} (v{version}, {size} bytes) -> {args.out}")
    return 0


def cmd_ls(args) -> int:
    with ManagerClient(args.manager) as mc:
        listing = mc.list_namespace(args.prefix)
        if args.benefactors:
            for b in mc.list_benefactors():
                state = "online" if b.online else "offline"
                print(
                    f"benefactor {b.benefactor_id} {b.address} {state} "
                    f"free={b.free_space >> 20}M"
                )
    for folder in listing:
        policy = folder["policy"]
        extra = f" purge_after={folder['purge_after']:.0f}s" if policy == "purge" else ""
        print(f"{folder['application']}/  policy={policy}{extra}")
        for v in folder["versions"]:
            print(
                f"  {v['name']:<32} v{v['version']:<4} {v['total_bytes']:>12} bytes  "
                f"{v['chunks']:>5} chunks  {v['replication_state']}"
            )
    return 0


def cmd_rm(args) -> int:
    with ManagerClient(args.manager) as mc:
        removed = mc.delete(args.target)
    print(f"deleted {removed} version(s) of {args.target}")
    return 0


def cmd_stat(args) -> int:
    with ManagerClient(args.manager) as mc:
        if args.version is not None:
            view = mc.get_map_version(args.target.split(".")[0], args.version)
        elif "." in args.target:
            view = mc.get_map(args.target)
        else:
            view = mc.get_latest(args.target)
    print(
        f"{view.name} v{view.version}: {view.total_bytes} bytes, "
        f"{len(view.chunks)} chunks, replication x{view.replication_target} "
        f"({view.replication_state})"
    )
    for cid, length, holders in view.chunks:
        where = ",".join(bid for bid, _ in holders)
        print(f"  {cid.hex()} {length:>10} [{where}]")
    return 0


def cmd_policy_set(args) -> int:
    cfg = Config({"purge_after": args.purge_after})
    with ManagerClient(args.manager) as mc:
        mc.set_policy(args.application, args.mode, cfg.get_duration("purge_after"))
    print(f"{args.application}: lifecycle={args.mode}")
    return 0


def cmd_gc_now(args) -> int:
    deleted = 0
    with ManagerClient(args.manager) as mc:
        benefactors = mc.list_benefactors()
    for b in benefactors:
        if not b.online:
            continue
        try:
            with BenefactorClient(b.address, timeout=30.0) as bc:
                n = bc.run_gc()
            print(f"{b.benefactor_id}: {n} chunks collected")
            deleted += n
        except (OSError, StorageError) as exc:
            print(f"{b.benefactor_id}: unreachable ({exc})")
    print(f"total {deleted}")
    return 0


def _with_cluster(args, fn) -> int:
    from .harness import LocalCluster

    if args.manager:
        return fn(args.manager)
    with tempfile.TemporaryDirectory(prefix="scavstore-bench-") as base:
        with LocalCluster(base, n_benefactors=args.benefactors) as cluster:
            return fn(cluster.manager_address)


def cmd_bench_write(args) -> int:
    from .harness import bench_write

    def run(address: str) -> int:
        report = bench_write(
            address,
            image_size=_size(args.size),
            runs=args.runs,
            protocols=tuple(args.protocols.split(",")),
            stripes=tuple(int(s) for s in args.stripes.split(",")),
            buffers=tuple(_size(b) for b in args.buffers.split(",")),
            dedup_modes=tuple(args.dedup.split(",")),
            versions=args.versions,
            mutation_fraction=args.mutation,
        )
        print(report.table())
        if report.similarity:
            mean = sum(report.similarity) / len(report.similarity)
            print(f"mean successive-version similarity: {mean:.3f}")
        if args.csv:
            Path(args.csv).write_text(report.to_csv())
            print(f"records -> {args.csv}")
        return 0

    return _with_cluster(args, run)


def cmd_bench_stress(args) -> int:
    from .harness import CSV_HEADER, bench_stress

    def run(address: str) -> int:
        report = bench_stress(
            address,
            clients=args.clients,
            files_per_client=args.files,
            file_size=_size(args.size),
            stagger=args.stagger,
        )
        total = sum(r.bytes_logical for r in report.records if r.outcome == "ok")
        print(
            f"{len(report.records)} sessions, {report.failed} failed, "
            f"{total >> 20} MB, aggregate {report.aggregate_bps / 2**20:.1f} MB/s"
        )
        peak = max(report.per_second) if report.per_second else 0
        print(f"peak {peak / 2**20:.1f} MB committed in one second")
        if args.csv:
            rows = [CSV_HEADER] + [r.csv() for r in report.records]
            Path(args.csv).write_text("\n".join(rows) + "\n")
            print(f"records -> {args.csv}")
        return 1 if report.failed else 0

    return _with_cluster(args, run)


def cmd_bench_chunking(args) -> int:
    from .harness import bench_chunking

    rows = bench_chunking(size=_size(args.size), runs=args.runs)
    if args.json:
        print(json.dumps(rows, indent=2))
        return 0
    print(f"{'heuristic':<16} {'backend':<10} {'MB/s':>10}")
    for row in rows:
        print(
            f"{row['heuristic']:<16} {row['backend']:<10} "
            f"{row['throughput'] / 2**20:>10.1f}"
        )
    return 0


COMMANDS = {
    "manager": cmd_manager,
    "benefactor": cmd_benefactor,
    "put": cmd_put,
    "get": cmd_get,
    "ls": cmd_ls,
    "rm": cmd_rm,
    "stat": cmd_stat,
    "policy-set": cmd_policy_set,
    "gc-now": cmd_gc_now,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "bench":
            handler = {
                "write": cmd_bench_write,
                "stress": cmd_bench_stress,
                "chunking": cmd_bench_chunking,
            }[args.bench_command]
            return handler(args)
        return COMMANDS[args.command](args)
    except KeyboardInterrupt:
        return 130
    except StorageError as exc:
        print(f"error ({exc.category}): {exc}", file=sys.stderr)
        for klass, code in EXIT_CODES:
            if isinstance(exc, klass):
                return code
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
