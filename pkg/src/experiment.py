"""
Experiment runner: solo and co-runs per design, CSV output and config sweeps.
"""
import glob
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from .config import ConfigError, Design, ExperimentConfig, load_config
from .engine import (Partition, SimResult, partition_sweep, run_pair, run_solo)
from .metrics import RunReport, build_report
from .utils import save_json
from .workload import AppTrace, generate, load_trace

logger = logging.getLogger(__name__)

SORT_KEYS = ["workload", "design"]
FLOAT_FORMAT = "%.6g"

# designs expected to order as Ideal >= GPU-MMU >= Static in per-app IPC
MONOTONE_CHAIN = (Design.IDEAL, Design.GPU_MMU, Design.STATIC)


@dataclass
class ExperimentOutcome:
    reports: List[RunReport]
    warnings: List[str] = field(default_factory=list)

    @property
    def rows(self) -> List[Dict[str, Any]]:
        return [r.to_row() for r in self.reports]


@dataclass
class SweepOutcome:
    rows: List[Dict[str, Any]]
    failures: List[Dict[str, str]]
    csv_path: Optional[Path] = None
    manifest_path: Optional[Path] = None


def load_workload(config: ExperimentConfig) -> List[AppTrace]:
    """Load or generate one trace per configured application."""
    if not config.workload.apps:
        raise ConfigError("no applications configured", key="workload.apps")
    traces = []
    for app in config.workload.apps:
        if app.trace is not None:
            trace = load_trace(config.resolve_path(app.trace))
        else:
            trace = generate(app.synthetic)
        if app.name:
            trace.name = app.name
        traces.append(trace)
    return traces


def _core_counts(config: ExperimentConfig, n_apps: int) -> List[int]:
    if config.partition.mode == "explicit":
        return list(config.partition.cores)
    return Partition.equal(n_apps, config.hardware.num_cores).counts


def run_design(config: ExperimentConfig, design: Design, traces: Sequence[AppTrace],
               solo_cache: Optional[Dict[Tuple, SimResult]] = None) -> RunReport:
    """
    Measure one design: the co-run, then IPC_alone per app on its core count
    over the co-run's cycle window.

    ``solo_cache`` is keyed by (design flags, app index, cores, window).
    """
    flags = config.design.flags_for(design)
    hw, mask, seed = config.hardware, config.mask, config.seed
    solo_cache = {} if solo_cache is None else solo_cache
    flag_key = tuple(sorted(flags.model_copy(update={"static_partition": False})
                            .model_dump().items()))

    if config.partition.mode == "sweep":
        design_cache: Dict[Tuple[int, int, int], SimResult] = {
            key[1:]: value for key, value in solo_cache.items() if key[0] == flag_key}
        choice = partition_sweep(hw, mask, flags, traces, seed, config.max_cycles, design_cache)
        for key, value in design_cache.items():
            solo_cache[(flag_key,) + key] = value
        shared = choice.shared
        counts = choice.partition.counts
    else:
        counts = _core_counts(config, len(traces))
        shared = run_pair(hw, mask, flags, traces, Partition.from_counts(counts), seed,
                          config.max_cycles)

    alone = []
    for i, trace in enumerate(traces):
        key = (flag_key, i, counts[i], shared.cycles)
        if key not in solo_cache:
            solo_cache[key] = run_solo(hw, mask, flags, trace, counts[i], seed,
                                       config.max_cycles, window=shared.cycles)
        alone.append(solo_cache[key])

    return build_report(
        workload=config.workload.name,
        design=design.value,
        shared_counters=shared.counters,
        ipc_shared=shared.ipc,
        ipc_alone=[a.ipc[0] for a in alone],
        app_names=[t.name for t in traces],
        core_counts=counts,
        alone_counters=[a.counters for a in alone],
        stalled_warps_histogram=shared.stalled_warps_histogram,
        concurrent_walks_histogram=shared.concurrent_walks_histogram,
        truncated=shared.truncated or any(a.truncated for a in alone),
    )


def check_monotonicity(reports: Sequence[RunReport]) -> List[str]:
    """Flag per-app IPC orderings that break Ideal >= GPU-MMU >= Static."""
    by_design = {r.design: r for r in reports}
    chain = [by_design[d.value] for d in MONOTONE_CHAIN if d.value in by_design]
    warnings = []
    for upper, lower in zip(chain, chain[1:]):
        for a_up, a_low in zip(upper.apps, lower.apps):
            if a_up.ipc_shared < a_low.ipc_shared:
                warnings.append(
                    f"{upper.workload}: {a_up.name} IPC {a_up.ipc_shared:.4g} under "
                    f"{upper.design} is below {a_low.ipc_shared:.4g} under {lower.design}")
    for message in warnings:
        logger.warning(message)
    return warnings


def run_experiment(config: Union[ExperimentConfig, str, Path]) -> ExperimentOutcome:
    """
    Run every configured design on the configured workload.

    Writes the CSV named by ``output.csv`` when set.
    """
    if not isinstance(config, ExperimentConfig):
        config = load_config(config)
    traces = load_workload(config)
    solo_cache: Dict[Tuple, SimResult] = {}
    reports = []
    for design in config.design.names:
        logger.info("%s: running %s", config.workload.name, design.value)
        reports.append(run_design(config, design, traces, solo_cache))
    outcome = ExperimentOutcome(reports, check_monotonicity(reports))
    if config.output.csv:
        write_csv(outcome.rows, config.resolve_path(config.output.csv))
    return outcome


def rows_frame(rows: Sequence[Dict[str, Any]]) -> pd.DataFrame:
    """Rows as a frame sorted by (workload, design); order among equals is kept."""
    df = pd.DataFrame(list(rows))
    if df.empty:
        return df
    return df.sort_values(SORT_KEYS, kind="mergesort").reset_index(drop=True)


def write_csv(rows: Sequence[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows_frame(rows).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.info("wrote %d rows to %s", len(rows), path)
    return path


def _run_config(path: str) -> Tuple[str, List[Dict[str, Any]], Optional[str]]:
    try:
        config = load_config(path)
        return path, run_experiment(config).rows, None
    except Exception as e:
        logger.error("%s failed: %s", path, e)
        return path, [], f"{type(e).__name__}: {e}"


def sweep(pattern: str, parallel: int = 1, out: Union[str, Path] = "results.csv",
          progress: bool = True) -> SweepOutcome:
    """
    Run every config matching ``pattern`` and merge the rows into one CSV.

    Failed configs are listed in ``<out>.failures.json``; the rows of the
    others are still written.

    Raises:
        ConfigError: If no config matches
    """
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise ConfigError(f"no config files match {pattern!r}")
    logger.info("sweeping %d configs with parallelism %d", len(paths), parallel)

    iterator = tqdm(paths, desc="configs", disable=not progress, leave=False)
    results = Parallel(n_jobs=max(1, parallel))(delayed(_run_config)(p) for p in iterator)

    rows = [row for _, path_rows, _ in results for row in path_rows]
    failures = [{"config": path, "error": error} for path, _, error in results if error]
    out = Path(out)
    csv_path = write_csv(rows, out) if rows else None
    manifest_path = None
    if failures:
        manifest_path = out.with_name(out.name + ".failures.json")
        save_json({"failures": failures}, str(manifest_path))
        logger.warning("%d of %d configs failed; see %s", len(failures), len(paths),
                       manifest_path)
    return SweepOutcome(rows, failures, csv_path, manifest_path)
