"""Batch pipelines: suites, convergence sweeps, and their artifacts."""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from src.config.experiment import ExperimentConfig
from src.config.settings import EXIT_CODES
from src.experiments.suites import (ACCEPTANCE, SUITES, CheckResult, SuiteOptions, SuiteOutcome,
                                    field_error, oracle_error)
from src.model.catalog import catalog_names, lookup
from src.model.problem import Problem
from src.pde.field import ThetaField
from src.pde.grid import TriangleGrid
from src.pde.picard import solve_type1_picard
from src.pde.type1 import solve_type1_fd
from src.pde.type2 import solve_type2
from src.utils.convergence import loglog_slope, observed_orders, richardson_extrapolate
from src.utils.errors import ConfigInvalid
from src.utils.io import write_manifest, write_table

logger = logging.getLogger(__name__)


class ExperimentRunner:
    """Coordinates one batch run: solves, verifications and output files."""

    def __init__(self, config: ExperimentConfig, threads: int = 1, output_dir: Optional[str] = None):
        self.config = config
        self.threads = max(int(threads), 1)
        self.output_dir = Path(output_dir or config.output_dir)
        self.digest = config.config_hash
        self.wall_times: Dict[str, float] = {}
        self.checks: List[CheckResult] = []
        logger.info(f"Experiment runner ready (hash={self.digest[:12]}, threads={self.threads}, "
                    f"output={self.output_dir})")

    @property
    def options(self) -> SuiteOptions:
        return SuiteOptions(n_paths=self.config.ensemble.n_paths, seed=self.config.ensemble.seed,
                            threads=self.threads, partitions=tuple(self.config.partitions))

    def run_suite(self, name: str) -> SuiteOutcome:
        """Run one named suite, or every suite for ``acceptance``."""
        names = list(SUITES) if name == ACCEPTANCE else [name]
        unknown = [suite for suite in names if suite not in SUITES]
        if unknown:
            raise ConfigInvalid(f"Unknown suite '{unknown[0]}' (known: {', '.join(list(SUITES) + [ACCEPTANCE])})",
                                key="SUITE")
        outcome = SuiteOutcome()
        for suite in names:
            started = time.perf_counter()
            logger.info(f"Running suite '{suite}': {SUITES[suite]['description']}")
            result = SUITES[suite]["run"](self.options)
            result.wall_time = time.perf_counter() - started
            self.wall_times[suite] = result.wall_time
            failed = [check.name for check in result.checks if not check.passed]
            logger.info(f"Suite '{suite}' finished in {result.wall_time:.1f}s "
                        f"({len(result.checks) - len(failed)}/{len(result.checks)} checks passed)")
            for check in failed:
                logger.warning(f"Check failed: {check}")
            outcome.extend(result)
        self.checks.extend(outcome.checks)
        return outcome

    def _solve(self, p: Problem, grid: TriangleGrid) -> ThetaField:
        backend = self.config.backend
        if p.kind == "II":
            gamma_backend = "kernel" if backend == "kernel" else "fd"
            inner = "picard" if backend == "picard" else "fd"
            return solve_type2(p, grid, tol=self.config.tolerances.type2, gamma_backend=gamma_backend,
                               inner_backend=inner, source_scheme=self.config.source_scheme).theta
        if backend in ("picard", "kernel"):
            return solve_type1_picard(p, grid, tol=self.config.tolerances.picard)
        return solve_type1_fd(p, grid, source_scheme=self.config.source_scheme)

    def _level_steps(self) -> List[int]:
        finest = self.config.grid.time_steps
        levels = self.config.refine
        steps = [max(int(round(finest / 2 ** (levels - 1 - i))), 1) for i in range(levels)]
        if len(set(steps)) != len(steps):
            raise ConfigInvalid(f"TIME_STEPS={finest} is too coarse for {levels} refinement levels", key="REFINE")
        return steps

    @property
    def time_order(self) -> int:
        """Leading Δs power of the configured solver."""
        return 2 if self.config.backend == "fd" and self.config.source_scheme == "heun" else 1

    def _extrapolated_errors(self, solved: List[Tuple[int, ThetaField]]) -> List[float]:
        coarsest = solved[0][0]
        diagonals = []
        for count, theta in solved:
            stride = count // coarsest
            if stride * coarsest != count:
                raise ConfigInvalid(f"TIME_STEPS={solved[-1][0]} does not halve into nested levels "
                                    f"({[level for level, _ in solved]})", key="TIME_STEPS")
            diagonals.append(theta.diagonal()[::stride])
        limit = richardson_extrapolate(diagonals, order=self.time_order)
        return [field_error(diagonal, limit) for diagonal in diagonals]

    def run_convergence(self) -> pd.DataFrame:
        """
        Solve the configured problem on successively halved time steps.

        Errors are measured against the closed form when the catalog has one, and
        otherwise against the Richardson limit of every level's diagonal on the
        coarsest knots; levels must then be nested.
        """
        p = self.config.build_problem()
        grid_spec = self.config.grid
        steps = self._level_steps()
        started = time.perf_counter()

        def job(count: int) -> Tuple[int, ThetaField]:
            grid = TriangleGrid.uniform(grid_spec.horizon, count, grid_spec.space_points, grid_spec.radius)
            return count, self._solve(p, grid)

        if self.threads > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                solved = list(pool.map(job, steps))
        else:
            solved = [job(count) for count in steps]

        entry = None
        if p.name in catalog_names():
            epsilon = self.config.problem.get("EPSILON")
            entry = lookup(p.name, horizon=grid_spec.horizon, epsilon=float(epsilon) if epsilon else None)

        if entry is not None and entry.closed_form_theta is not None:
            reference = "closed-form"
            errors = [oracle_error(entry, theta) for _, theta in solved]
        else:
            reference = "richardson"
            errors = self._extrapolated_errors(solved)

        dts = [grid_spec.horizon / count for count in steps] if grid_spec.horizon > 0 else [0.0] * len(steps)
        frame = pd.DataFrame({
            "level": np.arange(len(steps)),
            "time_steps": steps,
            "dt": dts,
            "error": errors,
            "observed_order": observed_orders(dts, errors),
        })
        frame["fitted_order"] = loglog_slope(dts, errors)
        frame["reference"] = reference
        frame["backend"] = self.config.backend
        frame["problem"] = p.name
        self.wall_times["convergence"] = time.perf_counter() - started
        logger.info(f"Convergence sweep of '{p.name}': fitted order {frame['fitted_order'].iloc[0]:.3f}")
        return frame

    def write_outcome(self, outcome: SuiteOutcome):
        write_table([check.as_row() for check in outcome.checks], self.output_dir / "checks.csv", self.digest)
        for name, table in outcome.tables.items():
            write_table(table, self.output_dir / f"{name}.csv", self.digest)

    def finish(self, extra: Optional[Dict] = None) -> int:
        """Write the manifest and return the exit status of the run."""
        status = EXIT_CODES["pass"] if all(check.passed for check in self.checks) else \
            EXIT_CODES["verification_failure"]
        manifest = {"exit_status": status, "checks": len(self.checks),
                    "failed": [check.name for check in self.checks if not check.passed]}
        manifest.update(extra or {})
        write_manifest(self.output_dir, self.digest, self.wall_times, manifest)
        return status

    def print_summary(self):
        """Pass/fail table on stdout."""
        if not self.checks:
            return
        frame = pd.DataFrame([check.as_row() for check in self.checks])
        print(frame[["suite", "check", "passed", "metric", "threshold"]].to_string(index=False))
