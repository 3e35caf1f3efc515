#!/usr/bin/env python3
"""
Tests for the Euler-Maruyama path simulator
"""
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.model.problem import SdeModel
from src.sde.simulator import (
    TimeGrid,
    increment_bound,
    load_ensemble,
    restart_paths,
    save_ensemble,
    simulate,
)
from src.utils.errors import ConfigurationError, GridMismatch, NonFiniteState


class TestTimeGrid(unittest.TestCase):
    """Knot handling of simulation grids."""

    def test_uniform_grid(self):
        """Uniform grids end exactly at the horizon."""
        grid = TimeGrid.uniform(1.0, 10)
        self.assertEqual(grid.steps, 10)
        self.assertEqual(grid.horizon, 1.0)
        self.assertAlmostEqual(grid.dt, 0.1)

    def test_rejects_unordered_knots(self):
        """Knots must be strictly increasing."""
        with self.assertRaises(GridMismatch):
            TimeGrid(np.array([0.0, 0.5, 0.5, 1.0]))
        with self.assertRaises(GridMismatch):
            TimeGrid(np.array([0.0]))

    def test_refine_and_subgrid(self):
        """A refined grid contains the coarse knots at every factor-th index."""
        coarse = TimeGrid.uniform(1.0, 4)
        fine = coarse.refine(3)
        self.assertEqual(fine.steps, 12)
        np.testing.assert_array_equal(coarse.indices_in(fine.knots), np.arange(0, 13, 3))
        self.assertTrue(coarse.is_subgrid_of(fine.knots))
        self.assertFalse(fine.is_subgrid_of(coarse.knots))


class TestSimulate(unittest.TestCase):
    """Path simulation."""

    def setUp(self):
        """Brownian model on a coarse grid."""
        self.model = SdeModel.constant(drift=0.0, sigma=1.0)
        self.grid = TimeGrid.uniform(1.0, 20)

    def test_shapes_and_start(self):
        """Paths start at x0 and carry one increment per step."""
        ens = simulate(self.model, 0.5, self.grid, n_paths=16, seed=1)
        self.assertEqual(ens.X.shape, (16, 21, 1))
        self.assertEqual(ens.dW.shape, (16, 20, 1))
        np.testing.assert_allclose(ens.X[:, 0, 0], 0.5)
        np.testing.assert_allclose(ens.X[:, -1] - ens.X[:, 0], ens.dW.sum(axis=1))

    def test_reproducible_and_subsettable(self):
        """The same seed reproduces paths, and a subset rebuilt from first_path matches."""
        full = simulate(self.model, 0.0, self.grid, n_paths=10, seed=7)
        again = simulate(self.model, 0.0, self.grid, n_paths=10, seed=7)
        tail = simulate(self.model, 0.0, self.grid, n_paths=4, seed=7, first_path=6)
        np.testing.assert_array_equal(full.X, again.X)
        np.testing.assert_array_equal(full.X[6:], tail.X)
        other = simulate(self.model, 0.0, self.grid, n_paths=10, seed=8)
        self.assertFalse(np.array_equal(full.X, other.X))

    def test_antithetic_pairs(self):
        """Odd paths use the negated increments of their even partner."""
        ens = simulate(self.model, 0.0, self.grid, n_paths=6, seed=2, antithetic=True)
        np.testing.assert_allclose(ens.dW[1::2], -ens.dW[0::2])

    def test_moments(self):
        """Brownian paths have mean x0 and variance t at the horizon."""
        ens = simulate(self.model, 0.0, self.grid, n_paths=4000, seed=11)
        terminal = ens.X[:, -1, 0]
        self.assertLess(abs(terminal.mean()), 0.1)
        self.assertLess(abs(terminal.var() - 1.0), 0.1)

    def test_increment_bound(self):
        """E|X(s)-X(t)|²/|s-t| is close to σ² for Brownian paths."""
        ens = simulate(self.model, 0.0, self.grid, n_paths=4000, seed=5)
        self.assertLess(abs(increment_bound(ens) - 1.0), 0.2)

    def test_invalid_path_count(self):
        """At least one path is needed."""
        with self.assertRaises(ConfigurationError):
            simulate(self.model, 0.0, self.grid, n_paths=0)

    def test_blow_up_is_reported(self):
        """Exploding drift raises NonFiniteState."""
        model = SdeModel(n=1, d=1, b=lambda s, x: 1e200 * x ** 2, sigma=lambda s, x: np.ones(x.shape + (1,)),
                         lipschitz_L=1.0, ellipticity_sigma_bar=1.0, bound_M=1.0)
        with np.errstate(over="ignore", invalid="ignore"):
            with self.assertRaises(NonFiniteState):
                simulate(model, 1.0, self.grid, n_paths=2, seed=0)

    def test_restart_paths(self):
        """Restarts begin at (s, x) on the knots after s."""
        ens = restart_paths(self.model, 0.5, 2.0, self.grid, n_paths=5, seed=3)
        self.assertEqual(ens.times[0], 0.5)
        self.assertEqual(ens.X.shape[1], 11)
        np.testing.assert_allclose(ens.X[:, 0, 0], 2.0)
        with self.assertRaises(GridMismatch):
            restart_paths(self.model, 0.525, 2.0, self.grid, n_paths=5)

    def test_save_and_load(self):
        """Ensembles survive the columnar archive."""
        ens = simulate(self.model, 0.0, self.grid, n_paths=8, seed=4, antithetic=True)
        with tempfile.TemporaryDirectory() as tmp:
            path = save_ensemble(ens, Path(tmp) / "paths.npz")
            loaded = load_ensemble(path)
        np.testing.assert_array_equal(loaded.X, ens.X)
        np.testing.assert_array_equal(loaded.dW, ens.dW)
        np.testing.assert_array_equal(loaded.times, ens.times)
        self.assertEqual(loaded.seed, 4)
        self.assertTrue(loaded.antithetic)


if __name__ == "__main__":
    unittest.main()
