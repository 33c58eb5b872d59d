"""Command-line interface for the GPU memory hierarchy simulator."""
import argparse
import logging
import sys
from pathlib import Path

import toml
from rich.console import Console
from rich.logging import RichHandler

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.config import ConfigError, load_config
from src.engine import ConfigInvalid
from src.experiment import load_workload, run_experiment, sweep
from src.metrics import summarize
from src.utils import format_reports, format_summary
from src.workload import ParseError, SpecInvalid, UndeclaredPage, generate, make_spec, write_trace

USER_ERRORS = (ConfigError, ConfigInvalid, ParseError, SpecInvalid, UndeclaredPage,
               FileNotFoundError)


def setup_logging(verbose: bool):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(message)s",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
    )


def cmd_run(args) -> int:
    config = load_config(args.config)
    fmt = args.format or config.output.format
    if args.csv:
        config.output.csv = str(Path(args.csv).resolve())
    print(f"Running {len(config.design.names)} design(s) on '{config.workload.name}'...",
          file=sys.stderr)
    outcome = run_experiment(config)
    for warning in outcome.warnings:
        print(f"Warning: {warning}", file=sys.stderr)
    print(format_reports(outcome.reports, format_type=fmt,
                         include_counters=args.debug_counters or config.output.debug_counters))
    if config.output.csv:
        print(f"CSV written to {config.resolve_path(config.output.csv)}", file=sys.stderr)
    return 0


def cmd_sweep(args) -> int:
    outcome = sweep(args.pattern, parallel=args.parallel, out=args.out,
                    progress=sys.stderr.isatty())
    if outcome.rows:
        print(format_summary(summarize(outcome.rows)))
        print(f"\n{len(outcome.rows)} rows written to {outcome.csv_path}", file=sys.stderr)
    if outcome.failures:
        print(f"{len(outcome.failures)} config(s) failed; manifest at {outcome.manifest_path}",
              file=sys.stderr)
        return 2
    return 0


def cmd_gen_trace(args) -> int:
    try:
        data = toml.load(args.spec)
    except toml.TomlDecodeError as e:
        raise SpecInvalid(f"cannot parse {args.spec}: {e}")
    spec = make_spec(**data.get("synthetic", data))
    trace = generate(spec)
    write_trace(trace, args.out)
    print(f"Wrote {trace.record_count} records for {trace.warp_count} warps "
          f"({len(trace.pages)} pages) to {args.out}", file=sys.stderr)
    return 0


def cmd_validate(args) -> int:
    config = load_config(args.config)
    traces = load_workload(config)
    print(f"Config OK: {config.workload.name}, designs "
          f"{[d.value for d in config.design.names]}, partition {config.partition.mode}")
    for trace in traces:
        print(f"  {trace.name}: {trace.warp_count} warps, {trace.record_count} records, "
              f"{len(trace.pages)} pages")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="GPU memory hierarchy simulator - address translation under multi-app contention"
    )
    parser.add_argument(
        "-v", "--verbose",
        action="store_true",
        help="Log per-epoch policy decisions"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Run one experiment config")
    run.add_argument("config", help="Experiment config (TOML)")
    run.add_argument(
        "-f", "--format",
        choices=["markdown", "text", "json"],
        default=None,
        help="Output format (default: output.format from the config)"
    )
    run.add_argument("--csv", default=None, help="Write CSV rows to this file")
    run.add_argument(
        "--debug-counters",
        action="store_true",
        help="Print the raw event counters behind every rate"
    )
    run.set_defaults(handler=cmd_run)

    sw = sub.add_parser("sweep", help="Run every config matching a glob")
    sw.add_argument("pattern", help="Glob of config files, e.g. 'configs/*.toml'")
    sw.add_argument("-p", "--parallel", type=int, default=1,
                    help="Experiments to run concurrently (default: 1)")
    sw.add_argument("-o", "--out", default="results.csv", help="Merged CSV (default: results.csv)")
    sw.set_defaults(handler=cmd_sweep)

    gen = sub.add_parser("gen-trace", help="Generate a synthetic trace file")
    gen.add_argument("spec", help="Generator spec (TOML, optionally under [synthetic])")
    gen.add_argument("-o", "--out", required=True, help="Trace file to write")
    gen.set_defaults(handler=cmd_gen_trace)

    val = sub.add_parser("validate", help="Check a config and its traces")
    val.add_argument("config", help="Experiment config (TOML)")
    val.set_defaults(handler=cmd_validate)
    return parser


def main(argv=None) -> int:
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.verbose)
    try:
        return args.handler(args)
    except USER_ERRORS as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
