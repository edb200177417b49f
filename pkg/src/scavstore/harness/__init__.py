from .bench import (
    CSV_HEADER,
    BenchReport,
    SessionRecord,
    StressReport,
    bench_chunking,
    bench_stress,
    bench_write,
    run_session,
)
from .cluster import ClusterError, LocalCluster, free_port
from .workload import WorkloadSpec, gen_versions

__all__ = [
    "CSV_HEADER",
    "BenchReport",
    "ClusterError",
    "LocalCluster",
    "SessionRecord",
    "StressReport",
    "WorkloadSpec",
    "bench_chunking",
    "bench_stress",
    "bench_write",
    "free_port",
    "gen_versions",
    "run_session",
]
