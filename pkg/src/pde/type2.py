"""Mild solutions (Γ, Θ) of the coupled Type-II representation system.

Γ(t, ·, ·) solves the source-free backward equation on [0, t] with terminal data
Θ(t, t, x, x); its spatial gradient feeds the ζ slot of the Θ generator through
ζ = Γ_ξ(s, t, ξ) σ(s, x). The pair is found by an outer Picard loop.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.config.settings import HOLDER, TYPE2
from src.kernel.gaussian import KernelParams, kernel_matrix
from src.model.problem import Problem, SdeModel
from src.pde.field import ThetaField
from src.pde.grid import BackwardStepper, TriangleGrid
from src.pde.picard import solve_type1_picard
from src.pde.type1 import Coupling, PdeResidual, solve_type1_fd
from src.utils.errors import (
    BadExponent,
    ConfigurationError,
    GridMismatch,
    MaxIterExceeded,
    NoContraction,
    NonFiniteField,
    WindowOutsideGrid,
)
from src.utils.io import load_columnar, save_columnar, write_table
from src.utils.logger import SolverLogger

logger = logging.getLogger(__name__)
log = SolverLogger("pde.type2", "outer")


@dataclass(eq=False)
class GammaField:
    """Values Γ[t_i, s_j, x_l, :] for s_j <= t_i; NaN above the diagonal."""

    grid: TriangleGrid
    values: np.ndarray
    backend: str = "fd"
    _gradient: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = self.grid.n_knots
        if self.values.ndim != 4 or self.values.shape[:3] != (n, n, self.grid.n_space):
            raise GridMismatch(f"Gamma values have shape {self.values.shape}, grid expects {(n, n, self.grid.n_space)}")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def gradient(self) -> np.ndarray:
        if self._gradient is None:
            self._gradient = np.gradient(self.values, self.grid.h, axis=2, edge_order=2)
        return self._gradient

    def valid_mask(self) -> np.ndarray:
        knots = self.grid.knots
        return knots[None, :] <= knots[:, None] + 1e-12

    def terminal_tie(self) -> np.ndarray:
        """Γ[t_i, t_i, x_l], shape (N_s, N_x, m)."""
        index = np.arange(self.grid.n_knots)
        return self.values[index, index]

    def interpolate(self, t_index, s_index, x, gradient: bool = False) -> np.ndarray:
        """Linear interpolation in x at knot pairs (t_i, s_j), s_j <= t_i."""
        data = self.gradient if gradient else self.values
        kx, wx, _ = self.grid.locate(x)
        wx = wx[..., None]
        t_index, s_index = np.asarray(t_index), np.asarray(s_index)
        return (1.0 - wx) * data[t_index, s_index, kx] + wx * data[t_index, s_index, kx + 1]


def _check_finite(values: np.ndarray, label: str):
    if not np.all(np.isfinite(values)):
        raise NonFiniteField(f"Gamma field became non-finite ({label})")


def gamma_from_diagonal(u: np.ndarray, model: SdeModel, grid: TriangleGrid, backend: Optional[str] = None,
                        theta: Optional[float] = None) -> GammaField:
    """
    Γ(t_i, s, x) for s <= t_i from terminal data u(t_i, ·).

    Args:
        u (np.ndarray): Diagonal values (N_s, N_x, m).
        model (SdeModel): Forward coefficients (constant for the kernel backend).
        grid (TriangleGrid): Shared knots and x-grid.
        backend (str, optional): ``fd`` (implicit march) or ``kernel`` (lag-matrix convolution).
        theta (float, optional): Implicitness weight of the fd march.

    Returns:
        GammaField: The lower-triangle field.

    Raises:
        NonFiniteField: Non-finite values appeared.
    """
    backend = backend or TYPE2["gamma_backend"]
    u = np.asarray(u, dtype=float)
    knots = grid.knots
    n = knots.size
    if u.shape[:2] != (n, grid.n_space):
        raise GridMismatch(f"Diagonal has shape {u.shape}, grid expects {(n, grid.n_space)} + (m,)")
    _check_finite(u, "terminal data")
    values = np.full((n, n) + u.shape[1:], np.nan)
    index = np.arange(n)
    values[index, index] = u

    if backend == "fd":
        stepper = BackwardStepper.from_model(model, grid.x, theta)
        for j in range(n - 2, -1, -1):
            values[j + 1:, j] = stepper.step(values[j + 1:, j + 1], knots[j], knots[j + 1])
    elif backend == "kernel":
        params = KernelParams.from_model(model, horizon=max(grid.horizon, grid.ds), radius=grid.radius, spacing=grid.h)
        lags = np.round(knots[:, None] - knots[None, :], 12)
        for lag in np.unique(lags[lags > 0.0]):
            rows, cols = np.nonzero(lags == lag)
            values[rows, cols] = np.matmul(kernel_matrix(float(lag), params, grid.x), u[rows])
    else:
        raise ConfigurationError(f"Unknown gamma backend '{backend}' (fd | kernel)")

    _check_finite(values[np.tril_indices(n)], backend)
    logger.debug(f"[{backend}] Gamma built on {n} knots")
    return GammaField(grid=grid, values=values, backend=backend)


def coupling_from_gamma(gamma: GammaField, model: SdeModel) -> Coupling:
    """ζ provider for the Θ solve: ζ[i, k, l] = Γ_x(s_j, t_i, ξ_k) σ(s_j, x_l), zero for t_i > s_j."""
    grid = gamma.grid
    gradient = np.nan_to_num(gamma.gradient)

    def provider(level: int, rows: int) -> np.ndarray:
        s = float(grid.knots[level])
        sigma = model.diffusion(s, grid.x[:, None])[:, 0, :]
        gx = gradient[level, :rows]
        return gx[:, :, None, :, None] * sigma[None, None, :, None, :]

    return provider


def coupling_consistency(theta: ThetaField, gamma: GammaField) -> float:
    """max |Γ(t, t, x) - Θ(t, t, x, x)| over all knots."""
    return float(np.max(np.abs(gamma.terminal_tie() - theta.diagonal())))


@dataclass(eq=False)
class MildSolution:
    """Converged pair with the outer-iteration log."""

    theta: ThetaField
    gamma: GammaField
    log: List[Dict[str, Any]] = field(default_factory=list)
    coupling_consistency: float = 0.0

    @property
    def iterations(self) -> int:
        return len(self.log)

    def iteration_table(self) -> pd.DataFrame:
        return pd.DataFrame(self.log, columns=["iteration", "update", "ratio", "wall_time"])

    def export_log(self, path: Union[str, Path], config_hash: Optional[str] = None) -> Path:
        return write_table(self.iteration_table(), path, config_hash=config_hash)

    def save(self, path: Union[str, Path]) -> Path:
        header = {
            "kind": "mild_solution",
            "alpha": self.theta.grid.alpha,
            "problem": self.theta.problem_name,
            "gamma_backend": self.gamma.backend,
            "scheme": self.theta.scheme,
            "tolerance": self.theta.tolerance,
            "coupling_consistency": self.coupling_consistency,
            "log": self.log,
        }
        columns = {"theta": self.theta.values, "gamma": self.gamma.values,
                   "knots": self.theta.grid.knots, "x": self.theta.grid.x}
        return save_columnar(path, columns, header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "MildSolution":
        columns, header = load_columnar(path, kind="mild_solution")
        grid = TriangleGrid(knots=columns["knots"], x=columns["x"], alpha=header["alpha"])
        theta = ThetaField(grid=grid, values=columns["theta"], problem_name=header["problem"],
                           scheme=header["scheme"], tolerance=header["tolerance"])
        gamma = GammaField(grid=grid, values=columns["gamma"], backend=header["gamma_backend"])
        return cls(theta=theta, gamma=gamma, log=header["log"], coupling_consistency=header["coupling_consistency"])


def solve_type2(p: Problem, grid: TriangleGrid, tol: Optional[float] = None, max_iter: Optional[int] = None,
                gamma_backend: Optional[str] = None, inner_backend: str = "fd",
                source_scheme: Optional[str] = None) -> MildSolution:
    """
    Outer Picard loop: u = diag θ, Γ = gamma_from_diagonal(u), θ = Type-I solve with ζ from Γ.

    Every t and ξ slice is stored because ζ depends on both.

    Args:
        p (TypeIIProblem): The problem.
        grid (TriangleGrid): Shared knots and x-grid.
        tol (float, optional): Sup-norm update tolerance.
        max_iter (int, optional): Outer iteration cap.
        gamma_backend (str, optional): ``fd`` or ``kernel``.
        inner_backend (str): ``fd`` or ``picard`` for the Θ solves.
        source_scheme (str, optional): Source treatment of the fd Θ solves.

    Returns:
        MildSolution: The converged pair.

    Raises:
        NoContraction: Two consecutive update ratios >= 1.
        MaxIterExceeded: ``tol`` not reached within ``max_iter`` iterations.
    """
    if p.kind != "II":
        raise ConfigurationError(f"solve_type2 needs a Type-II problem, got TYPE-{p.kind}")
    tol = TYPE2["tol"] if tol is None else tol
    max_iter = TYPE2["max_iter"] if max_iter is None else max_iter

    def solve(coupling):
        if inner_backend == "picard":
            return solve_type1_picard(p, grid, coupling=coupling, full=True)
        if inner_backend == "fd":
            return solve_type1_fd(p, grid, source_scheme=source_scheme, coupling=coupling, full=True)
        raise ConfigurationError(f"Unknown inner backend '{inner_backend}' (fd | picard)")

    started = time.perf_counter()
    theta = solve(None)
    history = []
    previous, streak = None, 0
    for iteration in range(1, max_iter + 1):
        gamma = gamma_from_diagonal(theta.diagonal(), p.model, grid, gamma_backend)
        updated = solve(coupling_from_gamma(gamma, p.model))
        update = float(np.nanmax(np.abs(updated.values - theta.values)))
        ratio = update / previous if previous else float("nan")
        history.append({"iteration": iteration, "update": update, "ratio": ratio,
                        "wall_time": time.perf_counter() - started})
        log.info(f"iteration {iteration}: update {update:.3e}, ratio {ratio:.3g}")
        theta = updated
        if update < tol:
            break
        streak = streak + 1 if previous and ratio >= 1.0 else 0
        if streak >= 2:
            raise NoContraction(f"Outer update ratio stayed >= 1 at iteration {iteration}")
        previous = update
    else:
        raise MaxIterExceeded(f"Type-II outer loop did not reach tol={tol:g} in {max_iter} iterations")

    consistency = coupling_consistency(theta, gamma)
    log.info(f"Converged '{p.name}' in {len(history)} outer iterations, coupling consistency {consistency:.3e}")
    return MildSolution(theta=theta, gamma=gamma, log=history, coupling_consistency=consistency)


def window_norm_y(theta: ThetaField, S: float, p_exponent: Optional[float] = None) -> float:
    """
    ‖θ‖_Y[S,T] = sup_t (∫_{t∨S}^T sup_{ξ,x} |θ_x|^p ds)^(1/p) + sup |θ| over s >= t ∨ S.

    Raises:
        BadExponent: p outside (1, 2).
        WindowOutsideGrid: S outside [0, T).
    """
    p_exponent = HOLDER["y_exponent"] if p_exponent is None else float(p_exponent)
    if not 1.0 < p_exponent < 2.0:
        raise BadExponent(f"The Y-norm exponent must lie in (1, 2), got {p_exponent}")
    knots = theta.grid.knots
    if S < knots[0] - 1e-12 or S >= knots[-1]:
        raise WindowOutsideGrid(f"S={S} is not inside [{knots[0]}, {knots[-1]})")
    t_values = knots if theta.depends_on_t else np.zeros(1)
    gradient_sup = np.abs(theta.gradient).max(axis=(2, 3, 4))
    value_sup = np.abs(theta.values).max(axis=(2, 3, 4))

    integral_part, sup_part = 0.0, 0.0
    for row, t in enumerate(t_values):
        keep = knots >= max(t, S) - 1e-12
        sup_part = max(sup_part, float(value_sup[row, keep].max()))
        if keep.sum() >= 2:
            integral = trapezoid(gradient_sup[row, keep] ** p_exponent, knots[keep])
            integral_part = max(integral_part, float(integral) ** (1.0 / p_exponent))
    return integral_part + sup_part


def gamma_residual(gamma: GammaField, model: SdeModel) -> PdeResidual:
    """Central-difference residual of Γ_s + a Γ_xx + b Γ_x on interior nodes of each slice."""
    grid = gamma.grid
    knots = grid.knots
    residual = np.full(gamma.values.shape, np.nan)
    stepper = BackwardStepper.from_model(model, grid.x)
    for j in range(1, knots.size - 1):
        rows = slice(j + 1, knots.size)
        time_derivative = (gamma.values[rows, j + 1] - gamma.values[rows, j - 1]) / (knots[j + 1] - knots[j - 1])
        residual[rows, j] = time_derivative + stepper.apply_operator(gamma.values[rows, j], knots[j])
    residual[:, :, 0] = np.nan
    residual[:, :, -1] = np.nan
    max_abs = float(np.nanmax(np.abs(residual))) if np.any(np.isfinite(residual)) else 0.0
    return PdeResidual(values=residual, max_abs=max_abs, constant=max_abs / (grid.ds + grid.h ** 2))
