"""
Multi-application metrics and run reports.

Every rate in a report is derived from the raw counters of a simulation, so
the two can be checked against each other.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import pandas as pd

logger = logging.getLogger(__name__)

L1_MISS_THRESHOLD = 0.2
L2_MISS_THRESHOLD = 0.3
HIGH_MISS_CLASS = "highL1-highL2"

SUMMARY_METRICS = (
    "weighted_speedup", "max_slowdown", "l1_tlb_hit_rate", "l2_tlb_hit_rate",
    "bypass_cache_hit_rate", "l2c_walk_hit_rate", "dram_walk_latency", "dram_data_latency",
)


class DivisionDomain(ZeroDivisionError):
    """A metric would divide by a zero IPC."""


def weighted_speedup(ipc_shared: Sequence[float], ipc_alone: Sequence[float]) -> float:
    """
    Sum of per-application IPC_shared / IPC_alone.

    Raises:
        DivisionDomain: If any IPC_alone is zero
    """
    if len(ipc_shared) != len(ipc_alone):
        raise ValueError("one shared and one alone IPC per application")
    if any(alone == 0 for alone in ipc_alone):
        raise DivisionDomain(f"IPC_alone is zero: {list(ipc_alone)}")
    return sum(shared / alone for shared, alone in zip(ipc_shared, ipc_alone))


def unfairness(ipc_alone: Sequence[float], ipc_shared: Sequence[float]) -> float:
    """
    Maximum slowdown, max of IPC_alone / IPC_shared.

    Raises:
        DivisionDomain: If any IPC_shared is zero
    """
    if len(ipc_shared) != len(ipc_alone) or not ipc_alone:
        raise ValueError("one shared and one alone IPC per application")
    if any(shared == 0 for shared in ipc_shared):
        raise DivisionDomain(f"IPC_shared is zero: {list(ipc_shared)}")
    return max(alone / shared for alone, shared in zip(ipc_alone, ipc_shared))


def rate(numerator: int, denominator: int) -> float:
    return numerator / denominator if denominator else 0.0


def classify_app(l1_miss_rate: float, l2_miss_rate: float,
                 l1_threshold: float = L1_MISS_THRESHOLD,
                 l2_threshold: float = L2_MISS_THRESHOLD) -> str:
    """Place an application in one of the four L1/L2 TLB miss-rate quadrants."""
    l1 = "highL1" if l1_miss_rate >= l1_threshold else "lowL1"
    l2 = "highL2" if l2_miss_rate >= l2_threshold else "lowL2"
    return f"{l1}-{l2}"


def hmr_category(classes: Sequence[str]) -> str:
    """Workload category by how many of its apps are high-miss in both TLB levels."""
    return f"{sum(1 for c in classes if c == HIGH_MISS_CLASS)} HMR"


def tlb_miss_rates(counters: Dict[str, int], prefix: str = "") -> Dict[str, float]:
    l1_accesses = counters[prefix + "l1_hits"] + counters[prefix + "l1_misses"]
    l2_accesses = counters[prefix + "l2_hits"] + counters[prefix + "l2_misses"]
    return {
        "l1": rate(counters[prefix + "l1_misses"], l1_accesses),
        "l2": rate(counters[prefix + "l2_misses"], l2_accesses),
    }


@dataclass
class AppReport:
    name: str
    cores: int
    ipc_shared: float
    ipc_alone: float
    slowdown: float
    l1_tlb_hit_rate: float
    l2_tlb_hit_rate: float
    app_class: str


@dataclass
class RunReport:
    """Outcome of one (workload, design) experiment."""
    workload: str
    design: str
    apps: List[AppReport]
    cycles: int
    weighted_speedup: float
    max_slowdown: float
    hmr: str
    l1_tlb_hit_rate: float
    l2_tlb_hit_rate: float
    translation_hit_rate: float
    bypass_cache_hit_rate: float
    l2c_walk_hit_rate: float
    l2c_data_hit_rate: float
    dram_data_bandwidth: float
    dram_walk_bandwidth: float
    dram_total_bandwidth: float
    dram_data_latency: float
    dram_walk_latency: float
    stalled_warps_per_miss: float
    max_concurrent_walks: int
    stalled_warps_histogram: Dict[int, int] = field(default_factory=dict)
    concurrent_walks_histogram: Dict[int, int] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    truncated: bool = False

    def to_row(self) -> Dict[str, Any]:
        """Flat CSV row; the column set depends only on the number of apps."""
        row: Dict[str, Any] = {
            "workload": self.workload,
            "design": self.design,
            "hmr": self.hmr,
            "partition": "+".join(str(a.cores) for a in self.apps),
            "cycles": self.cycles,
            "weighted_speedup": self.weighted_speedup,
            "max_slowdown": self.max_slowdown,
            "l1_tlb_hit_rate": self.l1_tlb_hit_rate,
            "l2_tlb_hit_rate": self.l2_tlb_hit_rate,
            "translation_hit_rate": self.translation_hit_rate,
            "bypass_cache_hit_rate": self.bypass_cache_hit_rate,
            "l2c_walk_hit_rate": self.l2c_walk_hit_rate,
            "l2c_data_hit_rate": self.l2c_data_hit_rate,
            "dram_data_bandwidth": self.dram_data_bandwidth,
            "dram_walk_bandwidth": self.dram_walk_bandwidth,
            "dram_total_bandwidth": self.dram_total_bandwidth,
            "dram_data_latency": self.dram_data_latency,
            "dram_walk_latency": self.dram_walk_latency,
            "stalled_warps_per_miss": self.stalled_warps_per_miss,
            "max_concurrent_walks": self.max_concurrent_walks,
            "truncated": self.truncated,
        }
        for i, app in enumerate(self.apps):
            for key, value in asdict(app).items():
                row[f"app{i}_{key}"] = value
        return row

    def to_dict(self, include_counters: bool = False) -> Dict[str, Any]:
        data = asdict(self)
        if not include_counters:
            data.pop("counters")
        return data


def build_report(workload: str, design: str, shared_counters: Dict[str, int],
                 ipc_shared: Sequence[float], ipc_alone: Sequence[float],
                 app_names: Sequence[str], core_counts: Sequence[int],
                 alone_counters: Optional[Sequence[Dict[str, int]]] = None,
                 stalled_warps_histogram: Optional[Dict[int, int]] = None,
                 concurrent_walks_histogram: Optional[Dict[int, int]] = None,
                 truncated: bool = False) -> RunReport:
    """
    Derive a report from raw co-run counters and solo IPCs.

    Args:
        shared_counters: Counters of the co-run
        alone_counters: Counters of each solo run, used to classify the apps
            by their unshared TLB miss rates
    """
    c = shared_counters
    cycles = c["cycles"]
    line = c.get("dram_line_size", 128)

    apps = []
    for i, name in enumerate(app_names):
        prefix = f"app{i}."
        own = tlb_miss_rates(alone_counters[i], "app0.") if alone_counters else \
            tlb_miss_rates(c, prefix)
        shared_rates = tlb_miss_rates(c, prefix)
        apps.append(AppReport(
            name=name,
            cores=core_counts[i],
            ipc_shared=ipc_shared[i],
            ipc_alone=ipc_alone[i],
            slowdown=ipc_alone[i] / ipc_shared[i] if ipc_shared[i] else float("inf"),
            l1_tlb_hit_rate=1.0 - shared_rates["l1"] if _accessed(c, prefix, "l1") else 0.0,
            l2_tlb_hit_rate=1.0 - shared_rates["l2"] if _accessed(c, prefix, "l2") else 0.0,
            app_class=classify_app(own["l1"], own["l2"]),
        ))

    l1_accesses = c["l1_hits"] + c["l1_misses"]
    data_bytes = c["dram_data_serviced"] * line
    walk_bytes = c["dram_walk_serviced"] * line
    return RunReport(
        workload=workload,
        design=design,
        apps=apps,
        cycles=cycles,
        weighted_speedup=weighted_speedup(ipc_shared, ipc_alone),
        max_slowdown=unfairness(ipc_alone, ipc_shared),
        hmr=hmr_category([a.app_class for a in apps]),
        l1_tlb_hit_rate=rate(c["l1_hits"], l1_accesses),
        l2_tlb_hit_rate=rate(c["l2_hits"], c["l2_hits"] + c["l2_misses"]),
        translation_hit_rate=rate(c["l1_hits"] + c["l2_hits"], l1_accesses),
        bypass_cache_hit_rate=rate(c["bypass_hits"], c["bypass_probes"]),
        l2c_walk_hit_rate=rate(c["l2c_walk_hits"], c["l2c_walk_accesses"]),
        l2c_data_hit_rate=rate(c["l2c_data_hits"], c["l2c_data_accesses"]),
        dram_data_bandwidth=data_bytes / cycles,
        dram_walk_bandwidth=walk_bytes / cycles,
        dram_total_bandwidth=(data_bytes + walk_bytes) / cycles,
        dram_data_latency=rate(c["dram_data_latency"], c["dram_data_serviced"]),
        dram_walk_latency=rate(c["dram_walk_latency"], c["dram_walk_serviced"]),
        stalled_warps_per_miss=rate(c["mshr_stalled_warps"], c["mshr_completed"]),
        max_concurrent_walks=c["max_concurrent_walks"],
        stalled_warps_histogram=dict(stalled_warps_histogram or {}),
        concurrent_walks_histogram=dict(concurrent_walks_histogram or {}),
        counters=dict(c),
        truncated=truncated,
    )


def _accessed(counters: Dict[str, int], prefix: str, level: str) -> bool:
    return counters[f"{prefix}{level}_hits"] + counters[f"{prefix}{level}_misses"] > 0


def summarize(rows: Sequence[Dict[str, Any]],
              metrics: Sequence[str] = SUMMARY_METRICS) -> Dict[str, Dict[str, Dict[str, float]]]:
    """
    Mean/min/max/count of each metric, overall and per HMR category.

    Returns:
        ``{group: {metric: {"mean", "min", "max", "count"}}}`` with group
        "overall" first
    """
    if not rows:
        return {}
    df = pd.DataFrame(list(rows))
    metrics = [m for m in metrics if m in df.columns]
    summary = {"overall": _describe(df, metrics)}
    if "hmr" in df.columns:
        for category, group in df.groupby("hmr", sort=True):
            summary[str(category)] = _describe(group, metrics)
    return summary


def _describe(df: pd.DataFrame, metrics: Sequence[str]) -> Dict[str, Dict[str, float]]:
    out = {}
    for metric in metrics:
        values = pd.to_numeric(df[metric], errors="coerce").dropna()
        if values.empty:
            continue
        out[metric] = {
            "mean": float(values.mean()),
            "min": float(values.min()),
            "max": float(values.max()),
            "count": int(values.count()),
        }
    return out
