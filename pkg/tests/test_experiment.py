#!/usr/bin/env python3
"""
Tests for experiment configs, the batch runner and the command line
"""
import json
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.config.experiment import ExperimentConfig
from src.experiments.runner import ExperimentRunner
from src.experiments.suites import ACCEPTANCE, SUITES, SuiteOptions, field_error, oracle_suite, suite_names
from src.main import main
from src.utils.convergence import loglog_slope, observed_orders, richardson_extrapolate
from src.utils.errors import ConfigInvalid


SMALL_GRID = "PROBLEM=diagonal-exponential\nTIME_STEPS=20\nSPACE_POINTS=41\nRADIUS=4\nN_PATHS=100\n"


class TestConvergenceHelpers(unittest.TestCase):
    """Slopes and orders of error sweeps."""

    def test_loglog_slope(self):
        """e = C h² has slope two; non-positive errors are dropped."""
        steps = [0.4, 0.2, 0.1]
        self.assertAlmostEqual(loglog_slope(steps, [3 * h ** 2 for h in steps]), 2.0)
        self.assertTrue(np.isnan(loglog_slope(steps, [0.0, 0.0, 1.0])))

    def test_observed_orders(self):
        """Pairwise orders with a NaN first entry."""
        orders = observed_orders([0.4, 0.2, 0.1], [0.4, 0.2, 0.1])
        self.assertTrue(np.isnan(orders[0]))
        np.testing.assert_allclose(orders[1:], 1.0)

    def test_richardson(self):
        """First-order errors cancel after one extrapolation."""
        values = [1.0 + h for h in (0.2, 0.1)]
        self.assertAlmostEqual(richardson_extrapolate(values, order=1), 1.0)
        with self.assertRaises(ValueError):
            richardson_extrapolate([1.0], order=1)

    def test_richardson_tableau(self):
        """Three levels remove the h and h² terms of every array entry."""
        steps = (0.4, 0.2, 0.1)
        values = [np.array([1.0 + h + h ** 2, 2.0 - 3.0 * h + 0.5 * h ** 2]) for h in steps]
        np.testing.assert_allclose(richardson_extrapolate(values, order=1), [1.0, 2.0], atol=1e-12)


class TestExperimentConfig(unittest.TestCase):
    """KEY=VALUE items validated into a batch config."""

    def test_sections_and_overrides(self):
        """Grid keys land in their section and non-empty overrides win."""
        config = ExperimentConfig.from_items({"PROBLEM": "diagonal-exponential", "TIME_STEPS": "50",
                                              "PARTITIONS": "2, 4", "BACKEND": "fd"},
                                             {"BACKEND": "picard", "SEED": None})
        self.assertEqual(config.grid.time_steps, 50)
        self.assertEqual(config.partitions, [2, 4])
        self.assertEqual(config.backend, "picard")
        self.assertNotIn("SEED", config.items)
        self.assertEqual(config.build_problem().name, "diagonal-exponential")

    def test_hash_follows_items(self):
        """Equal items give equal hashes; any change moves the hash."""
        first = ExperimentConfig.from_items({"PROBLEM": "constant-g", "TIME_STEPS": "10"})
        second = ExperimentConfig.from_items({"TIME_STEPS": "10", "PROBLEM": "constant-g"})
        third = ExperimentConfig.from_items({"PROBLEM": "constant-g", "TIME_STEPS": "11"})
        self.assertEqual(first.config_hash, second.config_hash)
        self.assertNotEqual(first.config_hash, third.config_hash)

    def test_invalid_values_name_their_key(self):
        """Validation errors carry the offending config key."""
        for key, value in (("TIME_STEPS", "0"), ("BACKEND", "spectral"), ("N_PATHS", "-3"),
                           ("PARTITIONS", "4,0")):
            with self.assertRaises(ConfigInvalid) as ctx:
                ExperimentConfig.from_items({"PROBLEM": "constant-g", key: value})
            self.assertEqual(ctx.exception.key, key)

    def test_missing_problem(self):
        """PROBLEM is required."""
        with self.assertRaises(ConfigInvalid) as ctx:
            ExperimentConfig.from_items({"TIME_STEPS": "10"})
        self.assertEqual(ctx.exception.key, "PROBLEM")

    def test_unknown_problem(self):
        """Unknown catalog names fail while loading."""
        with self.assertRaises(ConfigInvalid):
            ExperimentConfig.from_items({"PROBLEM": "no-such-problem"})


class TestOracleChecks(unittest.TestCase):
    """Oracle metric and the grids the oracle checks report."""

    def test_scaled_max_error(self):
        """Large fields are compared relative to their sup, small ones absolutely."""
        self.assertAlmostEqual(field_error(np.array([0.5, 2.1]), np.array([0.5, 2.0])), 0.05)
        self.assertAlmostEqual(field_error(np.array([0.2, np.nan]), np.array([0.1, 3.0])), 0.1)

    def test_checks_name_their_grid(self):
        """Type-I oracles run on the full grid; the Type-II oracle is labelled as reduced."""
        outcome = oracle_suite(SuiteOptions())
        details = {check.name: check.detail for check in outcome.checks}
        self.assertIn("N_s=200, N_x=401", details["oracle:diagonal-exponential"])
        for name in ("oracle:type2-unit-zeta:reduced-grid", "oracle:type2-unit-zeta:reduced-grid:gamma"):
            self.assertIn("N_s=40, N_x=81", details[name])
        self.assertNotIn("oracle:type2-unit-zeta", details)
        for detail in details.values():
            self.assertIn("scaled max error", detail)


class TestExperimentRunner(unittest.TestCase):
    """Suites, sweeps and artifacts."""

    def setUp(self):
        """Runner writing into a temporary directory."""
        self.tmp = tempfile.TemporaryDirectory()
        self.config = ExperimentConfig.from_items({"PROBLEM": "diagonal-exponential", "TIME_STEPS": "20",
                                                   "SPACE_POINTS": "41", "RADIUS": "4", "REFINE": "2"})
        self.runner = ExperimentRunner(self.config, output_dir=self.tmp.name)

    def tearDown(self):
        """Remove the output directory."""
        self.tmp.cleanup()

    def test_registry(self):
        """Every registered suite is selectable, plus acceptance."""
        self.assertEqual(suite_names(), list(SUITES) + [ACCEPTANCE])
        for entry in SUITES.values():
            self.assertTrue(callable(entry["run"]))

    def test_unknown_suite(self):
        """Unknown suite names are config errors."""
        with self.assertRaises(ConfigInvalid) as ctx:
            self.runner.run_suite("bogus")
        self.assertEqual(ctx.exception.key, "SUITE")

    def test_scaling_suite_artifacts(self):
        """A passing suite writes its checks, its table and a pass manifest."""
        outcome = self.runner.run_suite("scaling")
        self.assertTrue(outcome.passed, [c.name for c in outcome.checks if not c.passed])
        self.runner.write_outcome(outcome)
        status = self.runner.finish({"suite": "scaling"})
        self.assertEqual(status, 0)
        checks = pd.read_csv(Path(self.tmp.name) / "checks.csv")
        self.assertEqual(len(checks), len(outcome.checks))
        self.assertTrue((checks["config_hash"] == self.config.config_hash).all())
        self.assertTrue((Path(self.tmp.name) / "window_scaling.csv").exists())
        manifest = json.loads((Path(self.tmp.name) / "manifest.json").read_text())
        self.assertEqual(manifest["exit_status"], 0)
        self.assertIn("scaling", manifest["wall_times"])

    def test_convergence_against_closed_form(self):
        """Two levels of the lagged source show first order."""
        frame = self.runner.run_convergence()
        self.assertEqual(list(frame["time_steps"]), [10, 20])
        self.assertLess(frame["error"].iloc[1], frame["error"].iloc[0])
        self.assertAlmostEqual(frame["fitted_order"].iloc[0], 1.0, delta=0.15)

    def test_convergence_without_closed_form(self):
        """Problems without an oracle compare every level with the Richardson limit."""
        config = ExperimentConfig.from_items({"PROBLEM": "cascade-nonlinear", "TIME_STEPS": "20",
                                              "SPACE_POINTS": "41", "RADIUS": "4", "REFINE": "3"})
        frame = ExperimentRunner(config, output_dir=self.tmp.name).run_convergence()
        self.assertEqual(list(frame["time_steps"]), [5, 10, 20])
        self.assertTrue((frame["reference"] == "richardson").all())
        self.assertTrue(np.isfinite(frame["error"]).all())
        self.assertTrue((np.diff(frame["error"]) < 0).all())
        self.assertAlmostEqual(frame["fitted_order"].iloc[0], 1.0, delta=0.3)

    def test_extrapolation_needs_nested_levels(self):
        """Eight, fifteen and thirty steps are not nested halvings."""
        config = ExperimentConfig.from_items({"PROBLEM": "cascade-nonlinear", "TIME_STEPS": "30",
                                              "SPACE_POINTS": "41", "RADIUS": "4", "REFINE": "3"})
        with self.assertRaises(ConfigInvalid) as ctx:
            ExperimentRunner(config, output_dir=self.tmp.name).run_convergence()
        self.assertEqual(ctx.exception.key, "TIME_STEPS")

    def test_too_many_levels(self):
        """Coinciding levels are refused."""
        config = ExperimentConfig.from_items({"PROBLEM": "constant-g", "TIME_STEPS": "2", "REFINE": "3"})
        with self.assertRaises(ConfigInvalid) as ctx:
            ExperimentRunner(config, output_dir=self.tmp.name).run_convergence()
        self.assertEqual(ctx.exception.key, "REFINE")


class TestCommandLine(unittest.TestCase):
    """Exit statuses of the bsvie-rep commands."""

    def setUp(self):
        """Temporary output directory and config file."""
        self.tmp = tempfile.TemporaryDirectory()
        self.out = Path(self.tmp.name) / "run"
        self.config_path = Path(self.tmp.name) / "small.env"
        self.config_path.write_text(SMALL_GRID)

    def tearDown(self):
        """Remove the temporary directory."""
        self.tmp.cleanup()

    def test_catalog(self):
        """Listing the catalog succeeds."""
        self.assertEqual(main(["catalog", "--log-level", "WARNING"]), 0)

    def test_run_convergence(self):
        """A refinement run writes convergence.csv and a manifest and passes."""
        status = main(["run", "--config", str(self.config_path), "--problem", "diagonal-exponential",
                       "--refine", "2", "--out", str(self.out), "--log-level", "WARNING"])
        self.assertEqual(status, 0)
        frame = pd.read_csv(self.out / "convergence.csv")
        self.assertEqual(len(frame), 2)
        self.assertIn("fitted_order", frame.columns)
        manifest = json.loads((self.out / "manifest.json").read_text())
        self.assertEqual(manifest["problem"], "diagonal-exponential")

    def test_config_error_exit_status(self):
        """A composed problem without SIGMA exits with the config-error status."""
        broken = Path(self.tmp.name) / "broken.env"
        broken.write_text("PROBLEM=composed\nTYPE=I\nDRIFT=constant:0.0\nPSI=affine:0,1\nGENERATOR=affine:0,1@y\n"
                          "LIPSCHITZ=1.0\nELLIPTICITY=1.0\nBOUND_M=1.0\n")
        self.assertEqual(main(["validate", "--config", str(broken), "--log-level", "WARNING"]), 2)

    def test_validate_catalog_problem(self):
        """Catalog problems satisfy their declared constants."""
        self.assertEqual(main(["validate", "--problem", "diagonal-exponential", "--log-level", "WARNING"]), 0)

    def test_missing_config_file(self):
        """A missing config file is a config error."""
        self.assertEqual(main(["run", "--config", str(Path(self.tmp.name) / "absent.env"),
                               "--log-level", "WARNING"]), 2)


if __name__ == "__main__":
    unittest.main()
