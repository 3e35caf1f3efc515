#!/usr/bin/env python3
"""
Tests for the representation PDE solvers: grids, fields, FD marching, Picard and Type-II
"""
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np
import pandas as pd

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.experiments.suites import field_error, oracle_error
from src.model.catalog import lookup, type2_scaled_zeta
from src.model.problem import SdeModel, TypeIProblem
from src.pde.field import ThetaField
from src.pde.grid import BackwardStepper, TriangleGrid
from src.pde.picard import picard_contraction_ratio, solve_type1_picard
from src.pde.type1 import feynman_kac_reference, pde_residual, solve_linear_backward, solve_type1_fd
from src.pde.type2 import (
    MildSolution,
    gamma_from_diagonal,
    gamma_residual,
    solve_type2,
    window_norm_y,
)
from src.utils.errors import (
    BadExponent,
    ConfigurationError,
    GridMismatch,
    MaxIterExceeded,
    WindowOutsideGrid,
)


def heat_sin_exact(grid: TriangleGrid) -> np.ndarray:
    """e^{-(T-s)/2} sin x on (s, x)."""
    return np.exp(-0.5 * (grid.horizon - grid.knots))[:, None] * np.sin(grid.x)[None, :]


class TestTriangleGrid(unittest.TestCase):
    """Shared knots and spatial grid."""

    def setUp(self):
        """Ten steps on [0, 1], h = 0.4 on [-4, 4]."""
        self.grid = TriangleGrid.uniform(1.0, 10, 21, 4.0)

    def test_uniform_grid(self):
        """Sizes and spacings of a uniform grid."""
        self.assertEqual(self.grid.n_knots, 11)
        self.assertEqual(self.grid.n_space, 21)
        self.assertAlmostEqual(self.grid.h, 0.4)
        self.assertAlmostEqual(self.grid.ds, 0.1)
        self.assertEqual(self.grid.radius, 4.0)
        self.assertEqual(self.grid.horizon, 1.0)

    def test_zero_horizon(self):
        """T = 0 gives one knot and no time step."""
        grid = TriangleGrid.uniform(0.0, 10, 21, 4.0)
        self.assertEqual(grid.n_knots, 1)
        self.assertEqual(grid.ds, 0.0)

    def test_rejects_bad_grids(self):
        """Unordered knots, short or bent x-grids and bad exponents are refused."""
        with self.assertRaises(GridMismatch):
            TriangleGrid(knots=np.array([0.0, 0.5, 0.4]), x=np.linspace(-1, 1, 11))
        with self.assertRaises(GridMismatch):
            TriangleGrid(knots=np.array([0.5]), x=np.linspace(-1, 1, 11))
        with self.assertRaises(GridMismatch):
            TriangleGrid(knots=np.array([0.0, 1.0]), x=np.linspace(-1, 1, 4))
        bent = np.linspace(-1, 1, 11)
        bent[3] += 0.01
        with self.assertRaises(GridMismatch):
            TriangleGrid(knots=np.array([0.0, 1.0]), x=bent)
        with self.assertRaises(GridMismatch):
            TriangleGrid(knots=np.array([0.0, 1.0]), x=np.linspace(-1, 1, 11), alpha=1.0)

    def test_knot_index(self):
        """Knots are found by value; other times raise."""
        self.assertEqual(self.grid.knot_index(0.3), 3)
        with self.assertRaises(GridMismatch):
            self.grid.knot_index(0.35)

    def test_locate(self):
        """Cells, weights and the inside mask of points."""
        index, weight, inside = self.grid.locate(np.array([0.1, 5.0]))
        self.assertEqual(index[0], 10)
        self.assertAlmostEqual(weight[0], 0.25)
        np.testing.assert_array_equal(inside, [True, False])
        self.assertEqual(index[1], 19)
        self.assertEqual(weight[1], 1.0)


class TestBackwardStepper(unittest.TestCase):
    """One implicit backward step."""

    def test_linear_data_is_exact(self):
        """v = x + b(T - s) solves v_s + a v_xx + b v_x = 0 and survives the boundary rows."""
        x = np.linspace(-4.0, 4.0, 41)
        for theta in (0.5, 1.0):
            stepper = BackwardStepper.constant(0.5, 0.3, x, theta)
            stepped = stepper.step(x[:, None], 0.9, 1.0)
            np.testing.assert_allclose(stepped[:, 0], x + 0.03, atol=1e-10)

    def test_constant_source(self):
        """A unit source adds ds per step."""
        x = np.linspace(-4.0, 4.0, 41)
        stepper = BackwardStepper.constant(0.5, 0.0, x)
        stepped = stepper.step(np.zeros((41, 1)), 0.75, 1.0, np.ones((41, 1)))
        np.testing.assert_allclose(stepped, 0.25, atol=1e-12)

    def test_rejects_explicit_weights(self):
        """theta below one half is unstable and refused."""
        with self.assertRaises(GridMismatch):
            BackwardStepper.constant(0.5, 0.0, np.linspace(-1, 1, 11), theta=0.2)


class TestThetaField(unittest.TestCase):
    """Storage, interpolation and persistence of Θ."""

    def setUp(self):
        """Closed form of t-linear-g on a small grid."""
        self.grid = TriangleGrid.uniform(1.0, 4, 11, 2.0)
        self.entry = lookup("t-linear-g")
        self.field = ThetaField.from_function(self.grid, self.entry.closed_form_theta, depends_on_t=True,
                                              depends_on_xi=False, name="t-linear-g")

    def test_lower_triangle_is_nan(self):
        """Entries with s < t are undefined."""
        self.assertEqual(self.field.values.shape, (5, 5, 1, 11, 1))
        self.assertTrue(np.isnan(self.field.values[3, 1]).all())
        self.assertAlmostEqual(self.field.values[1, 3, 0, 0, 0], 0.25 * 0.25)

    def test_diagonal(self):
        """u(s, x) = s (T - s) for g = t."""
        u = self.field.diagonal()
        self.assertEqual(u.shape, (5, 11, 1))
        expected = self.grid.knots * (1.0 - self.grid.knots)
        np.testing.assert_allclose(u[:, 3, 0], expected, atol=1e-14)

    def test_interpolation_of_linear_field(self):
        """Linear interpolation reproduces Θ = x and its gradient."""
        field = ThetaField.from_function(self.grid, lookup("heat-terminal-x").closed_form_theta,
                                         depends_on_t=False, depends_on_xi=False)
        self.assertAlmostEqual(float(field.interpolate(0, 2, 0.0, 0.13)[0]), 0.13, places=12)
        self.assertAlmostEqual(float(field.interpolate(0, 2, 0.0, 0.13, gradient=True)[0]), 1.0, places=12)

    def test_shape_mismatch(self):
        """Values must match the grid."""
        with self.assertRaises(GridMismatch):
            ThetaField(grid=self.grid, values=np.zeros((5, 5, 1, 10, 1)), depends_on_xi=False)

    def test_save_load_and_export(self):
        """Archives round-trip the field and the diagonal exports as a CSV."""
        with tempfile.TemporaryDirectory() as tmp:
            path = self.field.save(Path(tmp) / "theta.npz")
            loaded = ThetaField.load(path)
            csv = self.field.export_diagonal(Path(tmp) / "u.csv", config_hash="abc")
            frame = pd.read_csv(csv)
        np.testing.assert_array_equal(loaded.values, self.field.values)
        np.testing.assert_array_equal(loaded.grid.knots, self.grid.knots)
        self.assertTrue(loaded.depends_on_t)
        self.assertFalse(loaded.depends_on_xi)
        self.assertEqual(list(frame.columns), ["config_hash", "s", "x", "u_0"])
        self.assertEqual(len(frame), 5 * 11)


class TestTypeIFiniteDifference(unittest.TestCase):
    """Backward marching of Type-I systems."""

    def setUp(self):
        """Coarse grid for exactly solvable entries."""
        self.grid = TriangleGrid.uniform(1.0, 10, 41, 4.0)

    def test_exact_entries(self):
        """Linear-in-x data and constant sources are reproduced to rounding."""
        for name in ("heat-terminal-x", "constant-g", "t-linear-g"):
            entry = lookup(name)
            theta = solve_type1_fd(entry.problem, self.grid)
            self.assertLess(oracle_error(entry, theta), 1e-10, name)

    def test_t_slices(self):
        """t-dependent problems store one row per t with NaN below the diagonal."""
        theta = solve_type1_fd(lookup("t-linear-g").problem, self.grid)
        self.assertEqual(theta.values.shape, (11, 11, 1, 41, 1))
        self.assertTrue(np.isnan(theta.values[5, 2]).all())
        self.assertEqual(theta.scheme["backend"], "fd")
        self.assertAlmostEqual(theta.tolerance, self.grid.ds + self.grid.h ** 2)

    def test_heun_diagonal_exponential(self):
        """The Heun source reproduces e^{T-s} to 1e-3."""
        entry = lookup("diagonal-exponential")
        theta = solve_type1_fd(entry.problem, TriangleGrid.uniform(1.0, 50, 41, 4.0), source_scheme="heun")
        self.assertLess(oracle_error(entry, theta), 1e-3)

    def test_lagged_source_is_first_order(self):
        """Halving the step halves the error of the lagged source."""
        entry = lookup("diagonal-exponential")
        coarse = oracle_error(entry, solve_type1_fd(entry.problem, TriangleGrid.uniform(1.0, 25, 21, 4.0)))
        fine = oracle_error(entry, solve_type1_fd(entry.problem, TriangleGrid.uniform(1.0, 50, 21, 4.0)))
        self.assertGreater(coarse / fine, 1.7)
        self.assertLess(coarse / fine, 2.3)

    def test_heat_terminal_sin(self):
        """Crank-Nicolson reaches the heat semigroup away from the grid ends."""
        grid = TriangleGrid.uniform(1.0, 50, 161, 8.0)
        theta = solve_type1_fd(lookup("heat-terminal-sin").problem, grid, theta=0.5)
        inner = np.abs(grid.x) <= grid.radius / 2.0
        gap = np.abs(theta.diagonal()[:, inner, 0] - heat_sin_exact(grid)[:, inner])
        self.assertLess(gap.max(), 5e-3)

    def test_unknown_source_scheme(self):
        """Only lagged and heun exist."""
        with self.assertRaises(ConfigurationError):
            solve_type1_fd(lookup("constant-g").problem, self.grid, source_scheme="rk4")

    def test_zero_horizon(self):
        """T = 0 returns the terminal data."""
        grid = TriangleGrid.uniform(0.0, 10, 41, 4.0)
        theta = solve_type1_fd(lookup("heat-terminal-x").problem, grid)
        np.testing.assert_allclose(theta.diagonal()[0, :, 0], grid.x)

    def test_pde_residual_of_closed_form(self):
        """The heat closed form leaves a residual of order ds² + h²."""
        grid = TriangleGrid.uniform(1.0, 50, 161, 8.0)
        entry = lookup("heat-terminal-sin")
        exact = ThetaField.from_function(grid, entry.closed_form_theta, depends_on_t=False, depends_on_xi=False)
        residual = pde_residual(exact, entry.problem)
        self.assertLess(residual.max_abs, 1e-3)
        self.assertTrue(np.isnan(residual.values[..., 0, :]).all())


class TestOneParameterSolves(unittest.TestCase):
    """Linear and semilinear solves without the t and ξ parameters."""

    def test_linear_backward_with_unit_source(self):
        """v_s + v_xx/2 + 1 = 0, v(T) = 0 gives T - s."""
        knots = np.linspace(0.0, 1.0, 11)
        x = np.linspace(-4.0, 4.0, 41)
        values = solve_linear_backward(0.5, 0.0, lambda s, x: 1.0, knots, x)
        np.testing.assert_allclose(values, np.broadcast_to((1.0 - knots)[:, None], values.shape), atol=1e-12)

    def test_feynman_kac_reference_heat(self):
        """Zero generator with h = sin x is the heat semigroup."""
        grid = TriangleGrid.uniform(1.0, 50, 161, 8.0)
        model = SdeModel.constant(drift=0.0, sigma=1.0)
        values = feynman_kac_reference(lambda s, v, z: np.zeros_like(v), np.sin, model, grid,
                                       source_scheme="heun", theta=0.5)
        inner = np.abs(grid.x) <= grid.radius / 2.0
        self.assertLess(np.abs(values[:, inner, 0] - heat_sin_exact(grid)[:, inner]).max(), 5e-3)


class TestPicard(unittest.TestCase):
    """Windowed Picard iteration with Gaussian transition matrices."""

    def setUp(self):
        """R = 6 keeps six standard deviations inside the grid."""
        self.grid = TriangleGrid.uniform(1.0, 32, 41, 6.0)

    def test_heat_terminal_x(self):
        """The shifted system of ψ = x has zero source."""
        entry = lookup("heat-terminal-x")
        theta = solve_type1_picard(entry.problem, self.grid)
        self.assertLess(oracle_error(entry, theta), 1e-10)
        self.assertEqual(theta.scheme["backend"], "picard")

    def test_diagonal_exponential(self):
        """Trapezoid steps reach e^{T-s} within 1e-3."""
        entry = lookup("diagonal-exponential")
        theta = solve_type1_picard(entry.problem, self.grid)
        self.assertLess(oracle_error(entry, theta), 1e-3)
        self.assertGreater(theta.scheme["iterations"], 1)
        self.assertTrue(theta.scheme["windows"])

    def test_contraction_improves_on_shorter_windows(self):
        """The measured X-norm ratio is below one and shrinks with the window."""
        p = lookup("diagonal-exponential").problem
        grid = TriangleGrid.uniform(1.0, 32, 81, 6.0)
        wide = picard_contraction_ratio(p, grid, 8, seed=1)
        narrow = picard_contraction_ratio(p, grid, 4, seed=1)
        self.assertLess(wide, 1.0)
        self.assertLessEqual(narrow, wide)

    def test_iteration_cap(self):
        """One sweep cannot converge a nonzero source."""
        with self.assertRaises(MaxIterExceeded):
            solve_type1_picard(lookup("diagonal-exponential").problem, self.grid, max_iter=1)

    def test_needs_constant_coefficients(self):
        """State-dependent drift is refused by the kernel backend."""
        model = SdeModel(n=1, d=1, b=lambda s, x: -x, sigma=lambda s, x: np.ones(np.shape(x) + (1,)),
                         lipschitz_L=1.0, ellipticity_sigma_bar=1.0, bound_M=1.0)
        p = TypeIProblem(model=model, m=1, psi=lambda t, xi, x: x, g=lambda t, s, xi, x, y, z: np.zeros_like(y),
                         lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False)
        with self.assertRaises(ConfigurationError):
            solve_type1_picard(p, self.grid)


class TestTypeII(unittest.TestCase):
    """Outer loop of the coupled (Γ, Θ) system."""

    def setUp(self):
        """Coarse grid; every (t, ξ) slice is stored."""
        self.grid = TriangleGrid.uniform(1.0, 10, 41, 4.0)
        self.entry = lookup("type2-unit-zeta")

    def test_unit_zeta_closed_form(self):
        """Θ = x + T - s and Γ = x + T - t after two outer iterations."""
        solution = solve_type2(self.entry.problem, self.grid, gamma_backend="fd")
        self.assertLessEqual(solution.iterations, 3)
        self.assertLess(oracle_error(self.entry, solution.theta), 1e-10)
        self.assertLess(solution.coupling_consistency, 1e-10)
        knots, x = self.grid.knots, self.grid.x
        exact = self.entry.closed_form_gamma(knots[:, None, None], knots[None, :, None], x[None, None, :, None])
        exact = np.where(solution.gamma.valid_mask()[:, :, None, None], exact, np.nan)
        self.assertLess(field_error(solution.gamma.values, exact), 1e-10)
        self.assertEqual(list(solution.iteration_table().columns), ["iteration", "update", "ratio", "wall_time"])

    def test_gamma_residual(self):
        """Γ built from a linear diagonal solves the source-free equation."""
        u = np.broadcast_to(self.grid.x[None, :, None], (self.grid.n_knots, self.grid.n_space, 1))
        gamma = gamma_from_diagonal(u, self.entry.problem.model, self.grid, backend="fd")
        self.assertLess(gamma_residual(gamma, self.entry.problem.model).max_abs, 1e-10)
        np.testing.assert_allclose(gamma.terminal_tie(), u)

    def test_unknown_gamma_backend(self):
        """Only fd and kernel build Γ."""
        u = np.zeros((self.grid.n_knots, self.grid.n_space, 1))
        with self.assertRaises(ConfigurationError):
            gamma_from_diagonal(u, self.entry.problem.model, self.grid, backend="spectral")

    def test_scaled_coupling_converges(self):
        """A half-strength ζ coupling contracts within fifteen iterations."""
        solution = solve_type2(type2_scaled_zeta(0.5).problem, TriangleGrid.uniform(1.0, 20, 41, 6.0))
        self.assertLessEqual(solution.iterations, 15)
        self.assertLess(solution.log[-1]["update"], 1e-6)

    def test_type_one_problem_refused(self):
        """The outer loop needs a ζ slot."""
        with self.assertRaises(ConfigurationError):
            solve_type2(lookup("constant-g").problem, self.grid)

    def test_save_and_load(self):
        """Mild solutions round-trip with their iteration log."""
        solution = solve_type2(self.entry.problem, self.grid)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = MildSolution.load(solution.save(Path(tmp) / "mild.npz"))
        np.testing.assert_array_equal(loaded.theta.values, solution.theta.values)
        np.testing.assert_array_equal(loaded.gamma.values, solution.gamma.values)
        self.assertEqual(loaded.iterations, solution.iterations)


class TestWindowNormY(unittest.TestCase):
    """Y-norm on a window [S, T]."""

    def setUp(self):
        """Θ = x on [-4, 4]: |Θ_x| = 1 and sup |Θ| = 4."""
        self.grid = TriangleGrid.uniform(1.0, 10, 41, 4.0)
        self.field = ThetaField.from_function(self.grid, lookup("heat-terminal-x").closed_form_theta,
                                              depends_on_t=False, depends_on_xi=False)

    def test_values(self):
        """(T - S)^{1/p} + 4 with p = 3/2."""
        self.assertAlmostEqual(window_norm_y(self.field, 0.0), 5.0, places=10)
        self.assertAlmostEqual(window_norm_y(self.field, 0.5), 0.5 ** (2.0 / 3.0) + 4.0, places=10)

    def test_bad_arguments(self):
        """Exponents outside (1, 2) and windows outside [0, T) raise."""
        with self.assertRaises(BadExponent):
            window_norm_y(self.field, 0.0, p_exponent=2.0)
        with self.assertRaises(WindowOutsideGrid):
            window_norm_y(self.field, 1.0)


if __name__ == "__main__":
    unittest.main()
