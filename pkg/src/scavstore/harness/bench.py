"""Benchmark drivers: write-protocol sweeps, multi-client stress, and the
chunking backend comparison. Emits one CSV record per session plus human
tables; orderings are what matter, absolute rates are hardware-bound."""

from __future__ import annotations

import statistics
import threading
import time
from dataclasses import dataclass, field

import numpy as np

from .. import chunking
from ..client import WritePolicy, open_read, open_write
from ..errors import StorageError
from .workload import WorkloadSpec, gen_versions

CSV_HEADER = "protocol,stripe,buffer,dedup,bytes_logical,bytes_uploaded,oab,asb,outcome"


@dataclass
class SessionRecord:
    protocol: str
    stripe: int
    buffer: int
    dedup: str
    bytes_logical: int
    bytes_uploaded: int
    oab: float
    asb: float
    outcome: str

    def csv(self) -> str:
        return (
            f"{self.protocol},{self.stripe},{self.buffer},{self.dedup},"
            f"{self.bytes_logical},{self.bytes_uploaded},{self.oab:.1f},"
            f"{self.asb:.1f},{self.outcome}"
        )


@dataclass
class BenchReport:
    records: list[SessionRecord] = field(default_factory=list)
    similarity: list[float] = field(default_factory=list)

    def to_csv(self) -> str:
        return "\n".join([CSV_HEADER] + [r.csv() for r in self.records]) + "\n"

    def median(self, metric: str, **match) -> float:
        values = [
            getattr(r, metric)
            for r in self.records
            if r.outcome == "ok" and all(getattr(r, k) == v for k, v in match.items())
        ]
        return statistics.median(values) if values else 0.0

    def stdev(self, metric: str, **match) -> float:
        values = [
            getattr(r, metric)
            for r in self.records
            if r.outcome == "ok" and all(getattr(r, k) == v for k, v in match.items())
        ]
        return statistics.pstdev(values) if len(values) > 1 else 0.0

    def upload_ratio(self, **match) -> float:
        logical = sum(
            r.bytes_logical for r in self.records
            if all(getattr(r, k) == v for k, v in match.items())
        )
        uploaded = sum(
            r.bytes_uploaded for r in self.records
            if all(getattr(r, k) == v for k, v in match.items())
        )
        return uploaded / logical if logical else 0.0

    def table(self) -> str:
        combos = sorted({(r.protocol, r.stripe, r.buffer, r.dedup) for r in self.records})
        lines = [
            f"{'protocol':<16} {'stripe':>6} {'buffer':>10} {'dedup':>5} "
            f"{'oab MB/s':>10} {'asb MB/s':>10} {'±':>8} {'upload%':>8}"
        ]
        for protocol, stripe, buffer, dedup in combos:
            match = dict(protocol=protocol, stripe=stripe, buffer=buffer, dedup=dedup)
            oab = self.median("oab", **match) / 2**20
            asb = self.median("asb", **match) / 2**20
            sd = self.stdev("asb", **match) / 2**20
            ratio = self.upload_ratio(**match) * 100
            lines.append(
                f"{protocol:<16} {stripe:>6} {buffer:>10} {dedup:>5} "
                f"{oab:>10.1f} {asb:>10.1f} {sd:>8.1f} {ratio:>7.1f}%"
            )
        return "\n".join(lines)


def run_session(
    manager_address: str,
    dataset: str,
    data_blocks,
    policy: WritePolicy,
    client_id: str | None = None,
    replication_wait: float = 60.0,
) -> SessionRecord:
    logical = 0
    try:
        session = open_write(manager_address, dataset, policy, client_id=client_id)
        for block in data_blocks:
            logical += len(block)
            session.write(block)
        _version, metrics = session.close_commit()
        if metrics.fully_stored_at is None:
            session.await_fully_stored(timeout=replication_wait)
        outcome = "ok"
    except StorageError as exc:
        return SessionRecord(
            policy.protocol, policy.stripe_width, policy.buffer_bytes, policy.dedup,
            logical, 0, 0.0, 0.0, f"failed:{exc.category}",
        )
    return SessionRecord(
        policy.protocol, policy.stripe_width, policy.buffer_bytes, policy.dedup,
        metrics.bytes_logical, metrics.bytes_uploaded, metrics.oab, metrics.asb, outcome,
    )


def _blocks(data: bytes, block: int = 1 << 20):
    return [data[i : i + block] for i in range(0, len(data), block)]


def bench_write(
    manager_address: str,
    image_size: int = 64 << 20,
    runs: int = 20,
    protocols=("sliding_window", "incremental", "complete_local"),
    stripes=(4,),
    buffers=(64 << 20,),
    dedup_modes=("off",),
    semantics: str = "optimistic",
    versions: int = 1,
    mutation_fraction: float = 0.0,
    seed: int = 0,
    spool_dir: str | None = None,
) -> BenchReport:
    """Sweep protocol x stripe x buffer x dedup; one committed version series
    per run."""
    report = BenchReport()
    for protocol in protocols:
        for stripe in stripes:
            for buffer in buffers:
                for dedup in dedup_modes:
                    for run in range(runs):
                        spec = WorkloadSpec(
                            image_size=image_size,
                            versions=versions,
                            mutation_fraction=mutation_fraction,
                            seed=seed + run,
                        )
                        policy = WritePolicy(
                            protocol=protocol,
                            semantics=semantics,
                            stripe_width=stripe,
                            buffer_bytes=buffer,
                            dedup=dedup,
                            spool_dir=spool_dir,
                        )
                        reference = None
                        for t, image in enumerate(gen_versions(spec)):
                            dataset = f"bench.{protocol}-{stripe}-{buffer}-{dedup}-{run}.{t}"
                            report.records.append(
                                run_session(manager_address, dataset, _blocks(image), policy)
                            )
                            if versions > 1:
                                descs = chunking.chunk_fixed(image, policy.chunk_size)
                                if reference is not None:
                                    report.similarity.append(
                                        chunking.similarity(reference, descs).ratio
                                    )
                                reference = descs
    return report


@dataclass
class StressReport:
    records: list[SessionRecord] = field(default_factory=list)
    started_at: float = 0.0
    finished_at: float = 0.0
    per_second: list[int] = field(default_factory=list)  # bytes committed per second

    @property
    def failed(self) -> int:
        return sum(1 for r in self.records if r.outcome != "ok")

    @property
    def aggregate_bps(self) -> float:
        span = self.finished_at - self.started_at
        total = sum(r.bytes_logical for r in self.records if r.outcome == "ok")
        return total / span if span > 0 else 0.0


def bench_stress(
    manager_address: str,
    clients: int = 7,
    files_per_client: int = 10,
    file_size: int = 16 << 20,
    stagger: float = 1.0,
    stripe: int = 4,
    protocol: str = "sliding_window",
    seed: int = 0,
) -> StressReport:
    """Staggered multi-client load; every client writes its own file series."""
    report = StressReport()
    lock = threading.Lock()
    completions: list[tuple[float, int]] = []

    def one_client(index: int):
        time.sleep(index * stagger)
        rng = np.random.default_rng(seed + index)
        for f in range(files_per_client):
            data = rng.integers(0, 256, file_size, dtype=np.uint8).tobytes()
            policy = WritePolicy(
                protocol=protocol,
                stripe_width=stripe,
                buffer_bytes=max(64 << 20, 2 * file_size),
                initial_reserve=file_size,
            )
            record = run_session(
                manager_address,
                f"stress.c{index}.{f}",
                _blocks(data),
                policy,
                client_id=f"stress-{index}",
            )
            with lock:
                report.records.append(record)
                completions.append((time.monotonic(), record.bytes_logical))

    threads = [threading.Thread(target=one_client, args=(i,)) for i in range(clients)]
    report.started_at = time.monotonic()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    report.finished_at = time.monotonic()
    if completions:
        base = report.started_at
        seconds = int(report.finished_at - base) + 1
        buckets = [0] * seconds
        for stamp, size in completions:
            buckets[min(seconds - 1, int(stamp - base))] += size
        report.per_second = buckets
    return report


def bench_chunking(size: int = 256 << 20, runs: int = 5, seed: int = 3) -> list[dict]:
    """FsCH vs CbCH throughput on both scan backends; median of `runs`."""
    data = np.random.default_rng(seed).integers(0, 256, size, dtype=np.uint8).tobytes()
    jobs = [
        ("fsch", lambda: chunking.chunk_fixed(data, 1 << 20)),
        ("cbch-nooverlap", lambda: chunking.chunk_content(
            data, chunking.CbchParams(m=20, k=14, p=20))),
        ("cbch-overlap", lambda: chunking.chunk_content(
            data, chunking.CbchParams(m=20, k=14, p=1))),
    ]
    backends = ["compiled", "pure"] if chunking.core._compiled is not None else ["pure"]
    out = []
    previous = chunking.BACKEND
    try:
        for backend in backends:
            chunking.set_backend(backend)
            for label, job in jobs:
                rates = []
                for _ in range(runs):
                    t0 = time.perf_counter()
                    job()
                    rates.append(size / (time.perf_counter() - t0))
                out.append(
                    {
                        "heuristic": label,
                        "backend": backend,
                        "throughput": statistics.median(rates),
                        "runs": runs,
                    }
                )
    finally:
        chunking.set_backend(previous)
    return out
