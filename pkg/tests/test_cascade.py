#!/usr/bin/env python3
"""
Tests for the partition cascade and its step processes
"""
import sys
import unittest
from pathlib import Path

import numpy as np

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.cascade.cascade import Partition, build_cascade, cascade_study, evaluate_cascade
from src.model.catalog import lookup
from src.model.problem import SdeModel, TypeIProblem
from src.pde.grid import TriangleGrid
from src.pde.type1 import solve_type1_fd
from src.sde.simulator import TimeGrid, simulate
from src.utils.errors import ConfigurationError, GridMismatch


class TestPartition(unittest.TestCase):
    """Knot bookkeeping of partitions."""

    def setUp(self):
        """Four equal intervals of [0, 1]."""
        self.pi = Partition.uniform(1.0, 4)

    def test_sizes(self):
        """N, horizon and mesh."""
        self.assertEqual(self.pi.N, 4)
        self.assertEqual(self.pi.horizon, 1.0)
        self.assertAlmostEqual(self.pi.mesh, 0.25)

    def test_left_closed_intervals(self):
        """Knots open their interval; T belongs to the last one."""
        np.testing.assert_array_equal(self.pi.interval_index([0.0, 0.25, 0.3, 0.999, 1.0]), [0, 1, 1, 3, 3])
        self.assertAlmostEqual(float(self.pi.tau(0.3)), 0.25)
        self.assertAlmostEqual(float(self.pi.tau_bar(0.3)), 0.5)
        self.assertAlmostEqual(float(self.pi.tau_bar(1.0)), 1.0)

    def test_rejects_bad_knots(self):
        """Partitions start at zero with increasing knots."""
        for knots in ([0.0], [0.1, 1.0], [0.0, 0.5, 0.5, 1.0]):
            with self.assertRaises(GridMismatch):
                Partition(np.array(knots))

    def test_knots_must_be_grid_knots(self):
        """Thirds are not knots of a ten-step grid."""
        with self.assertRaises(GridMismatch):
            Partition.uniform(1.0, 3).indices_in(np.linspace(0.0, 1.0, 11))
        np.testing.assert_array_equal(self.pi.indices_in(np.linspace(0.0, 1.0, 9)), [0, 2, 4, 6, 8])


class TestBuildCascade(unittest.TestCase):
    """Per-interval fields Θ^k."""

    def setUp(self):
        """Sixteen steps so every knot of a four-interval partition is a grid knot."""
        self.grid = TriangleGrid.uniform(1.0, 16, 41, 6.0)
        self.pi = Partition.uniform(1.0, 4)

    def test_t_free_problem_matches_type_one(self):
        """Without t-dependence every level equals the Type-I solution."""
        p = lookup("diagonal-exponential").problem
        cascade = build_cascade(p, self.pi, self.grid)
        reference = solve_type1_fd(p, self.grid)
        np.testing.assert_allclose(cascade.assembled_diagonal(), reference.diagonal(), atol=1e-12)
        np.testing.assert_allclose(cascade.jumps(), 0.0, atol=1e-12)
        self.assertEqual(len(cascade.fields), 4)
        self.assertTrue(np.isnan(cascade.fields[2][3]).all())

    def test_as_theta_field(self):
        """The piecewise-frozen field keeps the assembled diagonal."""
        cascade = build_cascade(lookup("cascade-nonlinear").problem, self.pi, self.grid)
        field = cascade.as_theta_field()
        self.assertEqual(field.values.shape, (17, 17, 1, 41, 1))
        np.testing.assert_allclose(field.diagonal(), cascade.assembled_diagonal())
        self.assertEqual(field.scheme["backend"], "cascade")

    def test_jumps_shrink_with_the_mesh(self):
        """ψ and g move with t, so knot jumps are of the order of the mesh."""
        p = lookup("cascade-nonlinear").problem
        coarse = build_cascade(p, Partition.uniform(1.0, 2), self.grid).jumps()
        fine = build_cascade(p, self.pi, self.grid).jumps()
        self.assertGreater(coarse.max(), 0.0)
        self.assertLess(fine.max(), coarse.max())

    def test_own_interval_couples_in_xi(self):
        """ψ = ξ, g = y on one interval: Θ^0(s, ξ, x) = ξ (1 + ds)^(steps left), whatever x is."""
        p = TypeIProblem(model=SdeModel.constant(drift=0.0, sigma=1.0, ellipticity_sigma_bar=1.0, bound_M=1.0),
                         m=1, psi=lambda t, xi, x: xi, g=lambda t, s, xi, x, y, z: y,
                         lipschitz_L=1.0, depends_on_t=False, depends_on_xi=True, name="xi-growth")
        grid = TriangleGrid.uniform(1.0, 40, 41, 2.0)
        cascade = build_cascade(p, Partition.uniform(1.0, 1), grid, source_scheme="lagged", theta=1.0)
        start = cascade.fields[0][0, :, :, 0]
        self.assertEqual(start.shape, (41, 41))
        np.testing.assert_allclose(start[20], 0.0, atol=1e-12)
        expected = grid.x[:, None] * (1.0 + grid.ds) ** 40
        np.testing.assert_allclose(start, np.broadcast_to(expected, start.shape), atol=1e-10)

    def test_type_two_refused(self):
        """The cascade is a Type-I construction."""
        with self.assertRaises(ConfigurationError):
            build_cascade(lookup("type2-unit-zeta").problem, self.pi, self.grid)

    def test_unknown_source_scheme(self):
        """Only lagged and heun exist."""
        with self.assertRaises(ConfigurationError):
            build_cascade(lookup("diagonal-exponential").problem, self.pi, self.grid, source_scheme="midpoint")


class TestEvaluateCascade(unittest.TestCase):
    """Step processes along paths."""

    def test_heat_terminal_x(self):
        """ψ = x, g = 0 gives Y = X and Z = σ = 1 on every interval."""
        grid = TriangleGrid.uniform(1.0, 20, 81, 8.0)
        p = lookup("heat-terminal-x").problem
        cascade = build_cascade(p, Partition.uniform(1.0, 4), grid)
        ens = simulate(p.model, 0.0, TimeGrid(grid.knots), 200, seed=1)
        pair = evaluate_cascade(cascade, ens, p.model)
        keep = pair.included
        np.testing.assert_allclose(pair.Y[keep], ens.X[keep], atol=1e-10)
        z = pair.z_upper(7)[keep]
        np.testing.assert_allclose(z[:, 7:], 1.0, atol=1e-10)
        self.assertTrue(np.isnan(z[:, :7]).all())


class TestCascadeStudy(unittest.TestCase):
    """Partition sweeps against the limit field."""

    def test_sweep_table(self):
        """Two partitions give two rows, the finer with the smaller mean jump."""
        study = cascade_study(lookup("cascade-nonlinear").problem, (2, 4),
                              grid=TriangleGrid.uniform(1.0, 16, 41, 6.0), n_paths=200, seed=2)
        table = study.table()
        self.assertEqual(list(table["N"]), [2, 4])
        self.assertLess(study.reports[1].jump_mean, study.reports[0].jump_mean)
        self.assertLess(study.reports[1].l2_error, study.reports[0].l2_error)
        for name in ("slope_l2", "slope_adjacent", "slope_jump"):
            self.assertIn(name, table.columns)


if __name__ == "__main__":
    unittest.main()
