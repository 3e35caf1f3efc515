"""Finite-difference backward marching of the Type-I representation system.

Every slice (t_i, ξ_k) solves
    Θ_s + a Θ_xx + b Θ_x + g(t, s, ξ, x, Θ(s,s,x,x), Θ_x σ) = 0,  Θ(T) = ψ(t, ξ, x)
and the slices couple only through the diagonal u(s, x) = Θ(s, s, x, x).
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from src.config.settings import SOLVER
from src.model.problem import Problem, SdeModel
from src.pde.field import ThetaField
from src.pde.grid import BackwardStepper, TriangleGrid
from src.utils.errors import ConfigurationError, NonFiniteField
from src.utils.logger import SolverLogger

logger = logging.getLogger(__name__)
log = SolverLogger("pde.type1", "fd")

# coupling(level, rows) -> zeta of shape (rows, N_xi, N_x, m, d)
Coupling = Callable[[int, int], np.ndarray]


class _Axes:
    """Broadcast views of the grid axes for generator calls at one level."""

    def __init__(self, grid: TriangleGrid, depends_on_t: bool, depends_on_xi: bool):
        self.depends_on_t = bool(depends_on_t)
        self.depends_on_xi = bool(depends_on_xi)
        t = grid.knots if self.depends_on_t else np.zeros(1)
        xi = grid.x if self.depends_on_xi else np.zeros(1)
        self.t = t[:, None, None]
        self.xi = xi[None, :, None, None]
        self.x = grid.x[None, None, :, None]
        self.columns = np.arange(grid.n_space) if self.depends_on_xi else np.zeros(grid.n_space, dtype=int)
        self.space = np.arange(grid.n_space)
        self.n_t = t.size
        self.n_xi = xi.size

    def rows(self, level: int) -> int:
        """Number of stored t rows active at s-level ``level``."""
        return level + 1 if self.depends_on_t else 1

    def row(self, level: int) -> int:
        return level if self.depends_on_t else 0

    def diagonal(self, level_values: np.ndarray, level: int) -> np.ndarray:
        return level_values[self.row(level), self.columns, self.space]


def _sigma_on_grid(model: SdeModel, s: float, x: np.ndarray) -> np.ndarray:
    return model.diffusion(s, x[:, None])[:, 0, :]


def level_source(p: Problem, grid: TriangleGrid, axes: _Axes, level_values: np.ndarray, level: int,
                 diagonal: np.ndarray, coupling: Optional[Coupling] = None) -> np.ndarray:
    """
    g(t_i, s_j, ξ_k, x_l, u(s_j, x_l), Θ_x σ(s_j, x_l)) for the stored rows of one level.

    Args:
        level_values (np.ndarray): Θ at level j for the active rows, (rows, N_xi, N_x, m).
        diagonal (np.ndarray): u at level j, (N_x, m).
        coupling (Coupling, optional): ζ provider of Type-II problems.
    """
    s = float(grid.knots[level])
    rows = level_values.shape[0]
    gradient = np.gradient(level_values, grid.h, axis=2, edge_order=2)
    sigma = _sigma_on_grid(p.model, s, grid.x)
    z = gradient[..., None] * sigma[None, None, :, None, :]
    args = (axes.t[:rows], s, axes.xi, axes.x, diagonal[None, None], z)
    if p.kind == "II":
        zeta = coupling(level, rows) if coupling is not None else None
        return p.generator(*args, zeta)
    return p.generator(*args)


def _check_finite(values: np.ndarray, s: float):
    if not np.all(np.isfinite(values)):
        raise NonFiniteField(f"Representation field became non-finite at s={s:.6g}")


def solve_type1_fd(p: Problem, grid: TriangleGrid, source_scheme: Optional[str] = None,
                   theta: Optional[float] = None, coupling: Optional[Coupling] = None,
                   full: bool = False) -> ThetaField:
    """
    Backward march of the representation system from s = T.

    Each t-slice is born at s = T with ψ(t_i, ·, ·) and marched down to s = t_i.
    Diffusion and drift are implicit; the nonlocal source is explicit, either lagged
    at s_{j+1} or Heun-corrected with the predicted diagonal at s_j.

    Args:
        p (TypeIProblem | TypeIIProblem): The problem (n = 1).
        grid (TriangleGrid): Shared knots and spatial grid.
        source_scheme (str, optional): ``lagged`` or ``heun`` (default from settings).
        theta (float, optional): Implicitness weight of the diffusion step.
        coupling (Coupling, optional): ζ provider for Type-II problems.
        full (bool): Store every t and ξ slice even if the problem ignores them.

    Returns:
        ThetaField: The solved field.

    Raises:
        NonFiniteField: The march produced NaN or infinite values.
        TridiagonalSingular: A banded solve failed.
    """
    p.model.require_scalar_state()
    scheme = source_scheme or SOLVER["source_scheme"]
    if scheme not in ("lagged", "heun"):
        raise ConfigurationError(f"Unknown source scheme '{scheme}' (lagged | heun)")
    started = time.perf_counter()
    axes = _Axes(grid, p.depends_on_t or full, p.depends_on_xi or full)
    knots = grid.knots
    n_knots = knots.size
    values = np.full((axes.n_t, n_knots, axes.n_xi, grid.n_space, p.m), np.nan)
    values[:, -1] = p.terminal(axes.t, axes.xi, axes.x)
    _check_finite(values[:, -1], grid.horizon)

    stepper = BackwardStepper.from_model(p.model, grid.x, theta)
    for j in range(n_knots - 2, -1, -1):
        previous = values[:axes.rows(j + 1), j + 1]
        rows = axes.rows(j)
        source = level_source(p, grid, axes, previous[:rows], j + 1, axes.diagonal(previous, j + 1), coupling)
        current = stepper.step(previous[:rows], knots[j], knots[j + 1], source)
        if scheme == "heun":
            corrected = level_source(p, grid, axes, current, j, axes.diagonal(current, j), coupling)
            current = stepper.step(previous[:rows], knots[j], knots[j + 1], 0.5 * (source + corrected))
        _check_finite(current, knots[j])
        values[:rows, j] = current
        if j % 50 == 0:
            log.debug(f"level {j}/{n_knots - 1} done ({rows} t-rows)")

    tolerance = grid.ds + grid.h ** 2
    wall = time.perf_counter() - started
    log.info(f"Solved '{p.name}' on {n_knots} knots x {grid.n_space} points ({scheme} source) in {wall:.2f}s")
    return ThetaField(
        grid=grid, values=values, depends_on_t=axes.depends_on_t, depends_on_xi=axes.depends_on_xi,
        problem_name=p.name,
        scheme={"backend": "fd", "source_scheme": scheme, "theta": stepper.theta, "wall_time": wall},
        tolerance=tolerance,
    )


def diagonal(field: ThetaField) -> np.ndarray:
    """u[s_j, x_l] = Θ[s_j, s_j, x_l, x_l] by direct indexing."""
    return field.diagonal()


@dataclass
class PdeResidual:
    """Per-node residual of the discrete PDE and its max over interior nodes."""

    values: np.ndarray
    max_abs: float
    constant: float


def pde_residual(field: ThetaField, p: Problem, coupling: Optional[Coupling] = None) -> PdeResidual:
    """
    Substitute Θ into the PDE with central differences in s and x.

    Interior nodes are s-levels with both neighbours defined for the slice and
    x-nodes away from the grid ends. ``constant`` is max / (Δs + h²).
    """
    grid = field.grid
    knots = grid.knots
    residual = np.full(field.values.shape, np.nan)
    if knots.size < 3:
        return PdeResidual(values=residual, max_abs=0.0, constant=0.0)
    axes = _Axes(grid, field.depends_on_t, field.depends_on_xi)
    stepper = BackwardStepper.from_model(p.model, grid.x)
    u = field.diagonal()

    for j in range(1, knots.size - 1):
        rows = axes.rows(j - 1)
        level = field.values[:rows, j]
        time_derivative = (field.values[:rows, j + 1] - field.values[:rows, j - 1]) / (knots[j + 1] - knots[j - 1])
        operator = stepper.apply_operator(level, knots[j])
        source = level_source(p, grid, axes, level, j, u[j], coupling)
        residual[:rows, j] = time_derivative + operator + source
    residual[..., 0, :] = np.nan
    residual[..., -1, :] = np.nan

    max_abs = float(np.nanmax(np.abs(residual))) if np.any(np.isfinite(residual)) else 0.0
    constant = max_abs / (grid.ds + grid.h ** 2)
    logger.info(f"PDE residual of '{field.problem_name}': max {max_abs:.3e}, C = {constant:.3g}")
    return PdeResidual(values=residual, max_abs=max_abs, constant=constant)


def solve_linear_backward(a: float, b: float, f: Callable, knots: np.ndarray, x: np.ndarray,
                          terminal: Optional[np.ndarray] = None, theta: Optional[float] = None) -> np.ndarray:
    """
    Solve v_s + a v_xx + b v_x + f(s, x) = 0 with v(T) = terminal (zero by default).

    Args:
        a (float): Diffusion coefficient.
        b (float): Drift.
        f (Callable): Source f(s, x) on the x-grid.
        knots (np.ndarray): Increasing s-knots ending at T.
        x (np.ndarray): Uniform spatial grid.
        terminal (np.ndarray, optional): v(T, x).
        theta (float, optional): Implicitness weight.

    Returns:
        np.ndarray: v on (knots, x).
    """
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    stepper = BackwardStepper.constant(a, b, x, theta)
    values = np.empty((knots.size, x.size))
    values[-1] = 0.0 if terminal is None else terminal

    def source(s):
        return np.broadcast_to(np.asarray(f(s, x), dtype=float), x.shape)[:, None]

    upper = source(knots[-1])
    for j in range(knots.size - 2, -1, -1):
        lower = source(knots[j])
        mixed = stepper.theta * lower + (1.0 - stepper.theta) * upper
        values[j] = stepper.step(values[j + 1][:, None], knots[j], knots[j + 1], mixed)[:, 0]
        upper = lower
    return values


def feynman_kac_reference(g_hat: Callable, h_fn: Callable, model: SdeModel, grid: TriangleGrid,
                          source_scheme: Optional[str] = None, theta: Optional[float] = None) -> np.ndarray:
    """
    One-parameter semilinear solve V_s + a V_xx + b V_x + ĝ(s, V, V_x σ) = 0, V(T) = h(x).

    Returns:
        np.ndarray: V on (knots, x, m).
    """
    model.require_scalar_state()
    scheme = source_scheme or SOLVER["source_scheme"]
    knots = grid.knots
    x = grid.x
    stepper = BackwardStepper.from_model(model, x, theta)
    terminal = np.asarray(h_fn(x[:, None]), dtype=float)
    values = np.empty((knots.size,) + terminal.shape)
    values[-1] = terminal

    def source(v, s):
        z = np.gradient(v, grid.h, axis=0, edge_order=2)[..., None] * _sigma_on_grid(model, s, x)[:, None, :]
        return np.asarray(g_hat(s, v, z), dtype=float)

    for j in range(knots.size - 2, -1, -1):
        explicit = source(values[j + 1], knots[j + 1])
        current = stepper.step(values[j + 1], knots[j], knots[j + 1], explicit)
        if scheme == "heun":
            current = stepper.step(values[j + 1], knots[j], knots[j + 1],
                                   0.5 * (explicit + source(current, knots[j])))
        _check_finite(current, knots[j])
        values[j] = current
    logger.info(f"[fd] Feynman-Kac reference solved on {knots.size} knots")
    return values
