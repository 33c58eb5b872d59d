"""Report formatting and small file helpers."""
from typing import Any, Dict, List
import json
from pathlib import Path

from .metrics import RunReport

RATE_FIELDS = [
    ("L1 TLB hit rate", "l1_tlb_hit_rate"),
    ("L2 TLB hit rate", "l2_tlb_hit_rate"),
    ("Translation hit rate", "translation_hit_rate"),
    ("Bypass cache hit rate", "bypass_cache_hit_rate"),
    ("L2 cache hit rate (walks)", "l2c_walk_hit_rate"),
    ("L2 cache hit rate (data)", "l2c_data_hit_rate"),
]


def format_reports(reports: List[RunReport], format_type: str = "text",
                   include_counters: bool = False) -> str:
    """
    Format run reports for display.

    Args:
        reports: Reports to show, one per design
        format_type: Output format ('markdown', 'text', 'json')
        include_counters: Append the raw counters every rate was derived from

    Returns:
        Formatted string representation of the reports
    """
    if not reports:
        return "No results."

    if format_type == "json":
        return json.dumps([r.to_dict(include_counters) for r in reports], indent=2)

    blocks = []
    for report in reports:
        if format_type == "markdown":
            lines = [
                f"**{report.workload} / {report.design}** ({report.hmr}, {report.cycles} cycles)",
                f"- **Weighted speedup**: {report.weighted_speedup:.4f}",
                f"- **Max slowdown**: {report.max_slowdown:.4f}",
            ]
            lines += [f"- **{label}**: {getattr(report, key):.2%}" for label, key in RATE_FIELDS]
            lines.append(f"- **DRAM bandwidth (B/cycle)**: data {report.dram_data_bandwidth:.3f}, "
                         f"walk {report.dram_walk_bandwidth:.3f}")
            lines.append(f"- **DRAM latency (cycles)**: data {report.dram_data_latency:.1f}, "
                         f"walk {report.dram_walk_latency:.1f}")
            lines.append(f"- **Stalled warps per TLB miss**: {report.stalled_warps_per_miss:.2f}")
            lines.append("")
            lines.append("| App | Class | Cores | IPC shared | IPC alone | Slowdown |")
            lines.append("|---|---|---|---|---|---|")
            lines += [f"| {a.name} | {a.app_class} | {a.cores} | {a.ipc_shared:.4f} | "
                      f"{a.ipc_alone:.4f} | {a.slowdown:.3f} |" for a in report.apps]
        else:  # text format
            lines = [
                f"{report.workload} / {report.design} ({report.hmr}, {report.cycles} cycles)",
                f"Weighted speedup: {report.weighted_speedup:.4f}",
                f"Max slowdown: {report.max_slowdown:.4f}",
            ]
            lines += [f"{label}: {getattr(report, key):.2%}" for label, key in RATE_FIELDS]
            lines.append(f"DRAM bandwidth (B/cycle): data {report.dram_data_bandwidth:.3f}, "
                         f"walk {report.dram_walk_bandwidth:.3f}")
            lines.append(f"DRAM latency (cycles): data {report.dram_data_latency:.1f}, "
                         f"walk {report.dram_walk_latency:.1f}")
            lines.append(f"Stalled warps per TLB miss: {report.stalled_warps_per_miss:.2f}")
            for a in report.apps:
                lines.append(f"  {a.name} [{a.app_class}] cores={a.cores} "
                             f"IPC shared={a.ipc_shared:.4f} alone={a.ipc_alone:.4f} "
                             f"slowdown={a.slowdown:.3f}")
        if report.truncated:
            lines.append("(stopped at the cycle limit)")
        if include_counters:
            lines.append("")
            lines.append("Raw counters:")
            lines += [f"  {key} = {value}" for key, value in sorted(report.counters.items())]
        blocks.append("\n".join(lines))

    return "\n\n".join(blocks)


def format_summary(summary: Dict[str, Dict[str, Dict[str, float]]]) -> str:
    """Render metrics.summarize output, one block per group."""
    lines = []
    for group, metrics in summary.items():
        lines.append(f"[{group}]")
        for name, data in metrics.items():
            lines.append(f"  {name}: mean {data['mean']:.4f}  min {data['min']:.4f}  "
                         f"max {data['max']:.4f}  n={data['count']}")
    return "\n".join(lines)


def save_json(data: Any, output_path: str):
    path = Path(output_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2)
