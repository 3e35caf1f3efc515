#!/usr/bin/env python3
"""
Tests for the Gaussian fundamental solution and its quadrature
"""
import sys
import unittest
from pathlib import Path

import numpy as np

# Add the src directory to the path
sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.kernel.gaussian import (
    KernelParams,
    chapman_kolmogorov_defect,
    fit_kernel_bounds,
    gaussian_kernel,
    gaussian_kernel_dx,
    heat_residual,
    kernel_apply,
    kernel_matrix,
    kernel_normalization,
    verify_kernel_bounds,
)
from src.model.problem import SdeModel
from src.utils.errors import DegenerateInterval, GridMismatch, KernelParamsInvalid


class TestKernelParams(unittest.TestCase):
    """Constructor checks."""

    def test_rejects_degenerate_diffusion(self):
        """a must be positive."""
        with self.assertRaises(KernelParamsInvalid):
            KernelParams(a=0.0, b=0.0, radius=8.0, spacing=0.01)

    def test_rejects_short_radius(self):
        """R/sqrt(aT) below six standard deviations is refused."""
        with self.assertRaises(KernelParamsInvalid):
            KernelParams(a=0.5, b=0.0, radius=3.0, spacing=0.01)

    def test_from_model(self):
        """a = sigma²/2 and b are read off a constant model."""
        params = KernelParams.from_model(SdeModel.constant(drift=0.3, sigma=1.0), 1.0, 8.0, 0.01)
        self.assertAlmostEqual(params.a, 0.5)
        self.assertAlmostEqual(params.b, 0.3)


class TestKernel(unittest.TestCase):
    """Density identities."""

    def setUp(self):
        """Brownian kernel with and without drift."""
        self.params = KernelParams(a=0.5, b=0.0, radius=8.0, spacing=0.01)
        self.drifted = KernelParams(a=0.5, b=0.3, radius=8.0, spacing=0.01)

    def test_normalization(self):
        """Mass one on the truncated window, with or without drift."""
        for params in (self.params, self.drifted):
            for tau in (0.05, 0.5, 1.0):
                self.assertLess(abs(kernel_normalization(params, 0.0, 0.3, tau) - 1.0), 1e-8)

    def test_degenerate_lag(self):
        """s >= tau raises."""
        with self.assertRaises(DegenerateInterval):
            gaussian_kernel(0.5, 0.0, 0.5, 0.0, self.params)

    def test_derivative_matches_difference_quotient(self):
        """G_x agrees with a central difference in x."""
        eta = np.linspace(-2.0, 2.0, 11)
        h = 1e-5
        numeric = (gaussian_kernel(0.0, 0.2 + h, 0.4, eta, self.drifted)
                   - gaussian_kernel(0.0, 0.2 - h, 0.4, eta, self.drifted)) / (2 * h)
        np.testing.assert_allclose(gaussian_kernel_dx(0.0, 0.2, 0.4, eta, self.drifted), numeric, atol=1e-7)

    def test_backward_equation(self):
        """(d_s + a d_xx + b d_x) G vanishes up to discretization error."""
        x_grid = np.linspace(-2.0, 2.0, 401)
        residual = heat_residual(self.drifted, 0.2, 0.8, x_grid, 0.5, 1e-6)
        self.assertLess(np.abs(residual).max(), 1e-3)

    def test_chapman_kolmogorov(self):
        """Composition of transition densities over an intermediate time."""
        defect = chapman_kolmogorov_defect(self.drifted, [(0.0, 0.3, 1.0), (0.1, 0.2, 0.25)])
        self.assertLess(defect, 1e-8)

    def test_kernel_matrix_preserves_constants(self):
        """Value-kernel rows have unit mass."""
        x_grid = np.linspace(-8.0, 8.0, 321)
        matrix = kernel_matrix(0.1, self.params, x_grid)
        np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-12)
        self.assertEqual(kernel_matrix(0.1, self.params, x_grid, derivative="x").shape, (321, 321))


class TestKernelApply(unittest.TestCase):
    """Duhamel quadrature on grid data."""

    def setUp(self):
        """Linear data f(tau, eta) = eta."""
        self.params = KernelParams(a=0.5, b=0.0, radius=8.0, spacing=0.01)
        self.tau = np.linspace(0.0, 1.0, 11)
        self.eta = np.linspace(-8.0, 8.0, 321)
        self.f = np.broadcast_to(self.eta, (self.tau.size, self.eta.size))

    def test_value_of_linear_data(self):
        """int_s^T E[X(tau)] dtau = x (T - s) for Brownian motion."""
        result = kernel_apply(self.f, self.tau, self.eta, 0.2, 0.5, self.params)
        self.assertAlmostEqual(float(result.value), 0.4, places=8)
        self.assertLess(result.error_estimate, 1e-6)

    def test_derivative_of_linear_data(self):
        """The G_x integral differentiates x (T - s) in x."""
        result = kernel_apply(self.f, self.tau, self.eta, 0.2, np.array([0.0, 0.5]), self.params, derivative="x")
        np.testing.assert_allclose(result.value, [0.8, 0.8], atol=1e-8)

    def test_grid_checks(self):
        """Shape mismatch and non-uniform eta grids raise GridMismatch."""
        with self.assertRaises(GridMismatch):
            kernel_apply(self.f[:, :-1], self.tau, self.eta, 0.2, 0.0, self.params)
        bent = self.eta.copy()
        bent[5] += 1e-3
        with self.assertRaises(GridMismatch):
            kernel_apply(self.f, self.tau, bent, 0.2, 0.0, self.params)
        with self.assertRaises(GridMismatch):
            kernel_apply(self.f, self.tau, self.eta, 1.0, 0.0, self.params)


class TestKernelBounds(unittest.TestCase):
    """Fitted Gaussian upper bounds."""

    def test_bounds_hold_on_their_sweep(self):
        """The fitted lambda lies in (0, 1/4a] and the bounds hold with drift."""
        for b in (0.0, 0.3):
            params = KernelParams(a=0.5, b=b, radius=8.0, spacing=0.01)
            bounds = fit_kernel_bounds(params, points=61)
            self.assertGreater(bounds.lam, 0.0)
            self.assertLessEqual(bounds.lam, 1.0 / (4.0 * params.a))
            ratios = verify_kernel_bounds(params, bounds, points=61)
            for name, ratio in ratios.items():
                self.assertLessEqual(ratio, 1.0 + 1e-9, name)


if __name__ == "__main__":
    unittest.main()
