"""Tests for configuration loading, the experiment runner, sweeps and the CLI."""
import json
import os
import tempfile
import unittest
import sys
from pathlib import Path
from unittest import mock

import toml

# Add parent directory to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from interface.cli import main
from src.config import ConfigError, Design, DesignConfig, build_config, load_config
from src.experiment import load_workload, run_experiment, sweep
from src.workload import generate, load_trace, make_spec
from src.utils import format_reports

SMALL_HARDWARE = {"num_cores": 4, "warps_per_core": 8, "memory_partitions": 2,
                  "l1_tlb_entries": 16, "l2_tlb_entries": 64, "l2_tlb_assoc": 4,
                  "bypass_cache_entries": 8, "l2_cache_kb": 64, "dram_channels": 2,
                  "dram_banks": 4, "walker_threads": 8, "physical_memory_mb": 64}

DESIGNS = ["GPU-MMU", "MASK-Full", "Ideal", "Static", "MASK-TLB"]


def experiment_data(csv=None, designs=DESIGNS, **overrides):
    apps = [
        {"synthetic": {"name": "streamer", "warps": 8, "working_set_pages": 64,
                       "locality": 0.2, "memory_ratio": 0.6, "stream_length": 32, "seed": 1}},
        {"synthetic": {"name": "reuser", "warps": 8, "working_set_pages": 16,
                       "locality": 0.9, "memory_ratio": 0.5, "stream_length": 32, "seed": 2}},
    ]
    data = {
        "seed": 3,
        "hardware": dict(SMALL_HARDWARE),
        "mask": {"epoch_length": 500},
        "design": {"names": list(designs)},
        "workload": {"name": "pair", "apps": apps},
    }
    if csv:
        data["output"] = {"csv": str(csv)}
    data.update(overrides)
    return data


class TestConfig(unittest.TestCase):
    """Test ExperimentConfig validation and loading."""

    def setUp(self):
        """Set up test fixtures."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_defaults(self):
        config = build_config({})
        self.assertEqual(config.hardware.num_cores, 30)
        self.assertEqual(config.hardware.l2_tlb_ports, 16)
        self.assertEqual(config.mask.epoch_length, 100_000)
        self.assertEqual(config.design.names, [Design.GPU_MMU])

    def test_error_names_key(self):
        with self.assertRaises(ConfigError) as ctx:
            build_config({"hardware": {"num_cores": 0}})
        self.assertEqual(ctx.exception.key, "hardware.num_cores")

    def test_unknown_key_rejected(self):
        with self.assertRaises(ConfigError):
            build_config({"hardware": {"cores": 4}})

    def test_app_needs_one_source(self):
        with self.assertRaises(ConfigError):
            build_config({"workload": {"apps": [{"name": "nothing"}]}})

    def test_sweep_needs_two_apps(self):
        data = experiment_data()
        data["workload"]["apps"] = data["workload"]["apps"][:1]
        data["partition"] = {"mode": "sweep"}
        with self.assertRaises(ConfigError):
            build_config(data)

    def test_explicit_counts_match_apps(self):
        with self.assertRaises(ConfigError):
            build_config(experiment_data(partition={"mode": "explicit", "cores": [4]}))

    def test_environment_overrides_file(self):
        with mock.patch.dict(os.environ, {"MASKSIM_HARDWARE__NUM_CORES": "6"}):
            config = build_config({"hardware": {"num_cores": 4, "warps_per_core": 8}})
        self.assertEqual(config.hardware.num_cores, 6)
        self.assertEqual(config.hardware.warps_per_core, 8)

    def test_design_overrides(self):
        flags = DesignConfig(dram_scheduler=False).flags_for(Design.MASK_FULL)
        self.assertFalse(flags.dram_scheduler)
        self.assertTrue(flags.tlb_tokens)

    def test_paths_resolve_next_to_config(self):
        path = self.dir / "nested" / "exp.toml"
        path.parent.mkdir()
        path.write_text(toml.dumps(experiment_data()))
        config = load_config(path)
        self.assertEqual(config.resolve_path("t.trace"), path.parent / "t.trace")

    def test_missing_and_malformed_files(self):
        with self.assertRaises(ConfigError):
            load_config(self.dir / "absent.toml")
        bad = self.dir / "bad.toml"
        bad.write_text("hardware = [unterminated")
        with self.assertRaises(ConfigError):
            load_config(bad)

    def test_no_apps(self):
        with self.assertRaises(ConfigError):
            load_workload(build_config({}))


class TestExperiment(unittest.TestCase):
    """Test run_experiment and sweep."""

    def setUp(self):
        """Set up test fixtures."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_one_row_per_design(self):
        outcome = run_experiment(build_config(experiment_data(csv=self.dir / "out.csv")))
        self.assertEqual([r.design for r in outcome.reports], DESIGNS)
        csv = (self.dir / "out.csv").read_text().splitlines()
        self.assertEqual(len(csv), 1 + len(DESIGNS))
        for report in outcome.reports:
            for value in (report.l1_tlb_hit_rate, report.l2_tlb_hit_rate,
                          report.l2c_walk_hit_rate, report.bypass_cache_hit_rate):
                self.assertGreaterEqual(value, 0.0)
                self.assertLessEqual(value, 1.0)
            self.assertAlmostEqual(report.dram_total_bandwidth,
                                   report.dram_data_bandwidth + report.dram_walk_bandwidth)
        ideal = next(r for r in outcome.reports if r.design == "Ideal")
        self.assertEqual(ideal.translation_hit_rate, 1.0)
        self.assertEqual(ideal.counters["walks_started"], 0)

    def test_csv_is_deterministic(self):
        first = self.dir / "first.csv"
        second = self.dir / "second.csv"
        run_experiment(build_config(experiment_data(csv=first, designs=["GPU-MMU", "MASK-Full"])))
        run_experiment(build_config(experiment_data(csv=second, designs=["GPU-MMU", "MASK-Full"])))
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_partition_sweep_mode(self):
        data = experiment_data(designs=["GPU-MMU"], partition={"mode": "sweep"})
        report = run_experiment(build_config(data)).reports[0]
        self.assertEqual(sum(a.cores for a in report.apps), 4)
        self.assertTrue(all(a.cores >= 1 for a in report.apps))

    def test_empty_glob(self):
        out = self.dir / "merged.csv"
        with self.assertRaises(ConfigError):
            sweep(str(self.dir / "*.toml"), out=out, progress=False)
        self.assertFalse(out.exists())

    def test_sweep_merges_and_reports_failures(self):
        good = self.dir / "a_good.toml"
        good.write_text(toml.dumps(experiment_data(designs=["GPU-MMU"])))
        (self.dir / "b_bad.toml").write_text(toml.dumps({"hardware": {"num_cores": 0}}))
        out = self.dir / "merged.csv"
        outcome = sweep(str(self.dir / "*.toml"), out=out, progress=False)
        self.assertEqual(len(outcome.rows), 1)
        self.assertEqual(len(outcome.failures), 1)
        self.assertTrue(out.exists())
        manifest = json.loads(outcome.manifest_path.read_text())
        self.assertIn("b_bad.toml", manifest["failures"][0]["config"])

    def test_reports_format(self):
        outcome = run_experiment(build_config(experiment_data(designs=["GPU-MMU"])))
        text = format_reports(outcome.reports, "text", include_counters=True)
        self.assertIn("Weighted speedup", text)
        self.assertIn("walks_started", text)
        self.assertIn("| App |", format_reports(outcome.reports, "markdown"))
        parsed = json.loads(format_reports(outcome.reports, "json"))
        self.assertEqual(parsed[0]["design"], "GPU-MMU")
        self.assertEqual(format_reports([]), "No results.")


class TestCli(unittest.TestCase):
    """Test the command-line entry point."""

    def setUp(self):
        """Set up test fixtures."""
        self._tmp = tempfile.TemporaryDirectory()
        self.dir = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_gen_trace(self):
        spec = {"name": "gen", "warps": 4, "working_set_pages": 16, "stream_length": 20,
                "seed": 5}
        spec_path = self.dir / "spec.toml"
        spec_path.write_text(toml.dumps({"synthetic": spec}))
        out = self.dir / "gen.trace"
        self.assertEqual(main(["gen-trace", str(spec_path), "-o", str(out)]), 0)
        self.assertEqual(load_trace(out), generate(make_spec(**spec)))

    def test_validate_and_run(self):
        path = self.dir / "exp.toml"
        path.write_text(toml.dumps(experiment_data(designs=["GPU-MMU"])))
        self.assertEqual(main(["validate", str(path)]), 0)
        self.assertEqual(main(["run", str(path), "--csv", str(self.dir / "rows.csv")]), 0)
        self.assertTrue((self.dir / "rows.csv").exists())

    def test_user_error_exit_code(self):
        self.assertEqual(main(["run", str(self.dir / "missing.toml")]), 1)


if __name__ == '__main__':
    unittest.main()
