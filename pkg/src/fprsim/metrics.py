"""Run metrics and the stable CSV schema consumed by external plotting."""
from __future__ import annotations

from dataclasses import dataclass, field, fields

SCHEMA_VERSION = "fprsim-metrics-v1"

# Column order is the external contract; plotting tools validate the exact
# header set, so changing it means bumping SCHEMA_VERSION.
CSV_COLUMNS = (
    "schema", "scenario", "label", "seed", "cores",
    "fpr", "scheme", "va_iteration", "device",
    "io_threads", "compute_threads", "mixed_threads", "reader_threads",
    "cf", "pg", "loops",
    "simulated_ticks", "io_ops", "compute_ops",
    "io_throughput", "compute_throughput",
    "shootdowns_sent", "shootdowns_received", "shootdowns_skipped_fpr",
    "fpr_context_exit_shootdowns", "shootdowns_munmap", "shootdowns_eviction",
    "shootdowns_other",
    "tlb_hits", "tlb_misses", "tlb_full_flushes", "tlb_range_flushes",
    "tlb_entries_dropped",
    "page_faults", "cow_faults", "writebacks",
    "evictions_normal", "evictions_huge", "huge_batches",
    "accesses_fresh", "accesses_benign_stale",
    "aba_violations", "security_violations", "segfaults",
)


@dataclass
class Metrics:
    """Counters accumulated by one simulation run."""

    shootdowns_sent: int = 0
    shootdowns_received: int = 0
    shootdowns_skipped_fpr: int = 0
    fpr_context_exit_shootdowns: int = 0
    shootdowns_munmap: int = 0
    shootdowns_eviction: int = 0
    shootdowns_other: int = 0
    page_faults: int = 0
    cow_faults: int = 0
    writebacks: int = 0
    evictions_normal: int = 0
    evictions_huge: int = 0
    huge_batches: int = 0
    accesses_fresh: int = 0
    accesses_benign_stale: int = 0
    aba_violations: int = 0
    security_violations: int = 0
    segfaults: int = 0

    def count_reason(self, reason: str) -> None:
        if reason == "fpr_context_exit":
            self.fpr_context_exit_shootdowns += 1
        elif reason in ("munmap", "fork_exit"):
            self.shootdowns_munmap += 1
        elif reason == "eviction":
            self.shootdowns_eviction += 1
        else:
            self.shootdowns_other += 1

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class RunRecord:
    """One simulation run flattened into the CSV schema."""

    scenario: str = ""
    label: str = ""
    seed: int = 0
    cores: int = 0
    fpr: bool = False
    scheme: str = ""
    va_iteration: bool = False
    device: str = ""
    io_threads: int = 0
    compute_threads: int = 0
    mixed_threads: int = 0
    reader_threads: int = 0
    cf: float = 0.0
    pg: int = 0
    loops: int = 0
    simulated_ticks: int = 0
    io_ops: int = 0
    compute_ops: int = 0
    tlb_hits: int = 0
    tlb_misses: int = 0
    tlb_full_flushes: int = 0
    tlb_range_flushes: int = 0
    tlb_entries_dropped: int = 0
    metrics: Metrics = field(default_factory=Metrics)

    @property
    def io_throughput(self) -> float:
        """io ops per million ticks."""
        if self.simulated_ticks == 0:
            return 0.0
        return self.io_ops * 1_000_000 / self.simulated_ticks

    @property
    def compute_throughput(self) -> float:
        if self.simulated_ticks == 0:
            return 0.0
        return self.compute_ops * 1_000_000 / self.simulated_ticks

    def csv_values(self) -> dict:
        m = self.metrics
        return {
            "schema": SCHEMA_VERSION,
            "scenario": self.scenario,
            "label": self.label,
            "seed": self.seed,
            "cores": self.cores,
            "fpr": "on" if self.fpr else "off",
            "scheme": self.scheme,
            "va_iteration": "on" if self.va_iteration else "off",
            "device": self.device,
            "io_threads": self.io_threads,
            "compute_threads": self.compute_threads,
            "mixed_threads": self.mixed_threads,
            "reader_threads": self.reader_threads,
            "cf": f"{self.cf:g}",
            "pg": self.pg,
            "loops": self.loops,
            "simulated_ticks": self.simulated_ticks,
            "io_ops": self.io_ops,
            "compute_ops": self.compute_ops,
            "io_throughput": f"{self.io_throughput:.6f}",
            "compute_throughput": f"{self.compute_throughput:.6f}",
            "shootdowns_sent": m.shootdowns_sent,
            "shootdowns_received": m.shootdowns_received,
            "shootdowns_skipped_fpr": m.shootdowns_skipped_fpr,
            "fpr_context_exit_shootdowns": m.fpr_context_exit_shootdowns,
            "shootdowns_munmap": m.shootdowns_munmap,
            "shootdowns_eviction": m.shootdowns_eviction,
            "shootdowns_other": m.shootdowns_other,
            "tlb_hits": self.tlb_hits,
            "tlb_misses": self.tlb_misses,
            "tlb_full_flushes": self.tlb_full_flushes,
            "tlb_range_flushes": self.tlb_range_flushes,
            "tlb_entries_dropped": self.tlb_entries_dropped,
            "page_faults": m.page_faults,
            "cow_faults": m.cow_faults,
            "writebacks": m.writebacks,
            "evictions_normal": m.evictions_normal,
            "evictions_huge": m.evictions_huge,
            "huge_batches": m.huge_batches,
            "accesses_fresh": m.accesses_fresh,
            "accesses_benign_stale": m.accesses_benign_stale,
            "aba_violations": m.aba_violations,
            "security_violations": m.security_violations,
            "segfaults": m.segfaults,
        }

    def csv_row(self) -> str:
        vals = self.csv_values()
        return ",".join(str(vals[c]) for c in CSV_COLUMNS)


def csv_header() -> str:
    return ",".join(CSV_COLUMNS)
