#!/usr/bin/env python3
"""
Tests for path-wise solution pairs and their residual verifiers
"""
import sys
import unittest
from pathlib import Path

import numpy as np

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.experiments.suites import square_probe
from src.model.catalog import lookup
from src.pde.field import ThetaField
from src.pde.grid import TriangleGrid
from src.pde.type1 import solve_type1_fd
from src.pde.type2 import solve_type2
from src.representation.evaluate import evaluate_martingale_probe, evaluate_type1, evaluate_type2
from src.representation.pair import DiagonalFunction, domain_mask
from src.representation.residuals import (
    bsvie_residual,
    feynman_kac_crosscheck,
    msolution_residual,
    probe_refinement,
    residual_refinement,
)
from src.sde.simulator import TimeGrid, simulate
from src.utils.errors import ConfigurationError, MissingLowerTriangle, PathOutsideDomain


class TestEvaluate(unittest.TestCase):
    """Reading (Y, Z) off solved fields."""

    def setUp(self):
        """Θ = x on a grid wide enough for every path."""
        self.entry = lookup("heat-terminal-x")
        self.grid = TriangleGrid.uniform(1.0, 20, 81, 8.0)
        self.ens = simulate(self.entry.problem.model, 0.0, TimeGrid(self.grid.knots), 200, seed=1)

    def test_type1_pair(self):
        """Y = X on the diagonal, Z = σ above it and no lower triangle."""
        theta = solve_type1_fd(self.entry.problem, self.grid)
        pair = evaluate_type1(theta, self.ens, self.entry.problem.model)
        np.testing.assert_allclose(pair.Y, self.ens.X, atol=1e-10)
        np.testing.assert_allclose(pair.Z_upper[:, 3, 3:], 1.0, atol=1e-10)
        self.assertTrue(np.isnan(pair.Z_upper[:, 3, :3]).all())
        self.assertFalse(pair.has_lower)
        with self.assertRaises(MissingLowerTriangle):
            pair.z_lower(2)

    def test_martingale_probe(self):
        """Z below the diagonal of Y = X(t)² is 2X(s)."""
        pair = evaluate_martingale_probe(square_probe(), self.entry.problem.model, self.grid, self.ens)
        np.testing.assert_allclose(pair.Y[..., 0], self.ens.X[..., 0] ** 2)
        lower = pair.z_lower(10)[:, :10, 0, 0]
        np.testing.assert_allclose(lower, 2.0 * self.ens.X[:, :10, 0], atol=1e-3)
        self.assertTrue(np.isnan(pair.z_lower(10)[:, 10:]).all())

    def test_domain_mask(self):
        """Paths leaving a narrow grid are excluded, or rejected when too many leave."""
        narrow = TriangleGrid.uniform(1.0, 20, 21, 0.5)
        with self.assertRaises(PathOutsideDomain):
            domain_mask(self.ens, narrow)
        self.assertTrue(domain_mask(self.ens, self.grid).all())

    def test_diagonal_function(self):
        """Λ broadcasts over time and state axes."""
        lam = DiagonalFunction(fn=lambda t, x: t[..., None] + x, name="t-plus-x")
        values = lam.on_grid(self.grid)
        self.assertEqual(values.shape, (21, 81, 1))
        self.assertAlmostEqual(float(values[20, 40, 0]), 1.0)


class TestResiduals(unittest.TestCase):
    """BSVIE and M-solution residuals of exact pairs."""

    def test_heat_terminal_x_is_exact(self):
        """Y(t) = X(t) - Σ ΔW telescopes to zero."""
        entry = lookup("heat-terminal-x")
        grid = TriangleGrid.uniform(1.0, 20, 81, 8.0)
        ens = simulate(entry.problem.model, 0.0, TimeGrid(grid.knots), 200, seed=1)
        pair = evaluate_type1(solve_type1_fd(entry.problem, grid), ens, entry.problem.model)
        stats = bsvie_residual(entry.problem, pair, ens)
        self.assertLess(stats.rms, 1e-12)
        self.assertEqual(stats.n_paths, 200)
        self.assertEqual(len(stats.table()), grid.n_knots)

    def test_unit_zeta_pair_is_exact(self):
        """The coupled closed form leaves zero BSVIE and centred M residuals."""
        entry = lookup("type2-unit-zeta")
        grid = TriangleGrid.uniform(1.0, 10, 61, 6.0)
        ens = simulate(entry.problem.model, 0.0, TimeGrid(grid.knots), 300, seed=4)
        pair = evaluate_type2(solve_type2(entry.problem, grid), ens, entry.problem.model)
        self.assertLess(bsvie_residual(entry.problem, pair, ens).rms, 1e-12)
        stats = msolution_residual(pair, ens)
        self.assertLess(stats.centred_rms, 1e-12)
        self.assertEqual(stats.metric, stats.centred_rms)
        self.assertIn("centred_rms", stats.table().columns)

    def test_msolution_needs_lower_triangle(self):
        """Type-I pairs cannot be checked as M-solutions."""
        entry = lookup("constant-g")
        grid = TriangleGrid.uniform(1.0, 10, 61, 6.0)
        ens = simulate(entry.problem.model, 0.0, TimeGrid(grid.knots), 50, seed=0)
        pair = evaluate_type1(solve_type1_fd(entry.problem, grid), ens, entry.problem.model)
        with self.assertRaises(MissingLowerTriangle):
            msolution_residual(pair, ens)


class TestRefinement(unittest.TestCase):
    """Residual sweeps under time-step refinement."""

    def test_exact_problem_waives_the_slope(self):
        """Every level below the floor marks the sweep exact."""
        result = residual_refinement(lookup("constant-g"), (10, 20), n_paths=50, seed=1, space_points=61,
                                     radius=6.0)
        self.assertTrue(result.exact)
        self.assertTrue(np.isnan(result.slope))
        self.assertEqual(len(result.table()), 2)

    def test_diagonal_exponential_rate(self):
        """The lagged source leaves a first-order residual."""
        result = residual_refinement(lookup("diagonal-exponential"), (10, 20, 40), n_paths=100, seed=1,
                                     space_points=61, radius=6.0)
        self.assertFalse(result.exact)
        self.assertEqual(result.expected_rate, 1.0)
        self.assertAlmostEqual(result.slope, 1.0, delta=0.15)

    def test_square_probe_rate(self):
        """The quadratic-variation error of X² decays like the square root of the step."""
        model = lookup("heat-terminal-x").problem.model
        result = probe_refinement(square_probe(), model, (10, 20, 40), n_paths=2000, seed=3)
        self.assertEqual(result.kind, "msolution")
        self.assertAlmostEqual(result.slope, 0.5, delta=0.15)

    def test_unknown_kind(self):
        """Only bsvie and msolution residuals exist."""
        with self.assertRaises(ConfigurationError):
            residual_refinement(lookup("constant-g"), (10,), kind="energy")


class TestFeynmanKac(unittest.TestCase):
    """Restarted-path cross-check of the diagonal."""

    def test_heat_terminal_sin(self):
        """E[sin X(T) | X(s) = x] agrees with Θ(s, s, x, x)."""
        entry = lookup("heat-terminal-sin")
        grid = TriangleGrid.uniform(1.0, 50, 161, 8.0)
        theta = solve_type1_fd(entry.problem, grid, theta=0.5)
        check = feynman_kac_crosscheck(theta, entry.problem, s_index=25, x=0.3, n_paths=2000, seed=1)
        self.assertTrue(check.passed, check)
        self.assertAlmostEqual(check.value, np.exp(-0.25) * np.sin(0.3), delta=5e-3)
        self.assertAlmostEqual(check.allowance, 4.0 * check.std_error + grid.ds)

    def test_closed_form_field(self):
        """The cross-check also accepts sampled closed forms."""
        entry = lookup("constant-g")
        grid = TriangleGrid.uniform(1.0, 20, 81, 8.0)
        field = ThetaField.from_function(grid, entry.closed_form_theta, depends_on_t=False, depends_on_xi=False)
        check = feynman_kac_crosscheck(field, entry.problem, s_index=10, x=0.0, n_paths=100, seed=2)
        self.assertAlmostEqual(check.estimate, 0.5, places=10)
        self.assertTrue(check.passed)


if __name__ == "__main__":
    unittest.main()
