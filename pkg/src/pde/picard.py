"""Windowed Picard iteration of the shifted Type-I system (constant coefficients).

With θ̃ = Θ - ψ the system has zero terminal data and the mild form
    θ̃(t, s, ξ, ·) = ∫_s^T P_{τ-s} f(t, τ, ξ, ·) dτ,
    f = a ψ_xx + b ψ_x + g(t, τ, ξ, x, θ̃(τ,τ,x,x) + ψ(τ,x,x), (θ̃_x + ψ_x) σ),
where P_r is the Gaussian transition operator. On the grid the time integral is
a trapezoid step per knot interval:
    θ̃(s_j) = P_Δ [θ̃(s_{j+1}) + Δ/2 f_{j+1}] + Δ/2 f_j.
"""

import logging
import time
from typing import Dict, Optional, Tuple

import numpy as np

from src.config.settings import PICARD
from src.kernel.gaussian import KernelParams, kernel_matrix
from src.model.problem import Problem
from src.norms.holder import xnorm
from src.pde.field import ThetaField
from src.pde.grid import TriangleGrid
from src.pde.type1 import Coupling
from src.utils.errors import MaxIterExceeded, NoContraction
from src.utils.logger import SolverLogger

logger = logging.getLogger(__name__)
log = SolverLogger("pde.picard", "picard")


class _ShiftedSystem:
    """Grid data of the shifted problem that do not change between iterations."""

    def __init__(self, p: Problem, grid: TriangleGrid, full: bool = False):
        p.model.require_scalar_state()
        self.p = p
        self.grid = grid
        self.a, self.b = p.model.constant_ab()
        self.depends_on_t = bool(p.depends_on_t or full)
        self.depends_on_xi = bool(p.depends_on_xi or full)
        t = grid.knots if self.depends_on_t else np.zeros(1)
        xi = grid.x if self.depends_on_xi else np.zeros(1)
        self.t = t[:, None, None]
        self.xi = xi[None, :, None, None]
        self.x = grid.x[None, None, :, None]
        self.shape = (t.size, grid.n_knots, xi.size, grid.n_space, p.m)
        h = grid.h

        self.psi = np.array(np.broadcast_to(p.terminal(self.t, self.xi, self.x), (t.size, xi.size, grid.n_space, p.m)))
        self.psi_x = np.gradient(self.psi, h, axis=2, edge_order=2)
        psi_xx = np.gradient(self.psi_x, h, axis=2, edge_order=2)
        self.free = self.a * psi_xx + self.b * self.psi_x

        s_index = np.arange(grid.n_knots)[:, None]
        x_index = np.arange(grid.n_space)[None, :]
        self.rows = s_index * int(self.depends_on_t)
        self.columns = x_index * int(self.depends_on_xi)
        self.x_index = x_index
        self.psi_diagonal = self.psi[self.rows, self.columns, x_index]
        self.sigma = p.model.constant_sigma[0][None, None, None, None, :]

        horizon = max(grid.horizon, grid.ds)
        self.params = KernelParams(a=self.a, b=self.b, radius=grid.radius, spacing=h, horizon=horizon)
        self._matrices: Dict[float, np.ndarray] = {}

    def transition(self, lag: float) -> np.ndarray:
        key = round(lag, 14)
        if key not in self._matrices:
            self._matrices[key] = kernel_matrix(lag, self.params, self.grid.x)
        return self._matrices[key]

    def source(self, theta_tilde: np.ndarray, level: int, coupling: Optional[Coupling]) -> np.ndarray:
        s = float(self.grid.knots[level])
        level_values = theta_tilde[:, level]
        diagonal = level_values[self.rows[level, 0], self.columns[0], self.x_index[0]] + self.psi_diagonal[level]
        gradient = np.gradient(level_values, self.grid.h, axis=2, edge_order=2) + self.psi_x
        z = gradient[..., None] * self.sigma
        args = (self.t, s, self.xi, self.x, diagonal[None, None], z)
        if self.p.kind == "II":
            zeta = coupling(level, self.shape[0]) if coupling is not None else None
            return self.free + self.p.generator(*args, zeta)
        return self.free + self.p.generator(*args)


def _picard_map(system: _ShiftedSystem, theta_tilde: np.ndarray, window: Tuple[int, int],
                coupling: Optional[Coupling]) -> np.ndarray:
    j0, j1 = window
    knots = system.grid.knots
    out = theta_tilde.copy()
    upper = system.source(theta_tilde, j1, coupling)
    for j in range(j1 - 1, j0 - 1, -1):
        lower = system.source(theta_tilde, j, coupling)
        lag = float(knots[j + 1] - knots[j])
        out[:, j] = system.transition(lag) @ (out[:, j + 1] + 0.5 * lag * upper) + 0.5 * lag * lower
        upper = lower
    return out


def apply_picard_map(p: Problem, grid: TriangleGrid, theta_tilde: np.ndarray, window: Tuple[int, int],
                     coupling: Optional[Coupling] = None, full: bool = False) -> np.ndarray:
    """
    One application of S on the knot window [s_{j0}, s_{j1}].

    Args:
        p (TypeIProblem | TypeIIProblem): Constant-coefficient problem.
        grid (TriangleGrid): Grid of the iterate.
        theta_tilde (np.ndarray): Shifted iterate on the full (t, s, ξ, x, m) rectangle.
        window (Tuple[int, int]): Knot indices (j0, j1); levels >= j1 are kept as given.
        coupling (Coupling, optional): ζ provider of Type-II problems.
        full (bool): The iterate stores every t and ξ slice.

    Returns:
        np.ndarray: S[θ̃], equal to the input outside [j0, j1).
    """
    return _picard_map(_ShiftedSystem(p, grid, full), np.asarray(theta_tilde, dtype=float), window, coupling)


def _masked_sup(difference: np.ndarray, mask: np.ndarray) -> float:
    masked = np.where(mask[:, :, None, None, None], np.abs(difference), 0.0)
    return float(masked.max()) if masked.size else 0.0


def _validity(system: _ShiftedSystem) -> np.ndarray:
    knots = system.grid.knots
    if not system.depends_on_t:
        return np.ones((1, knots.size), dtype=bool)
    return knots[None, :] >= knots[:, None] - 1e-12


def solve_type1_picard(p: Problem, grid: TriangleGrid, window_steps: Optional[int] = None,
                       tol: Optional[float] = None, max_iter: Optional[int] = None,
                       coupling: Optional[Coupling] = None, full: bool = False) -> ThetaField:
    """
    Picard fixed point of the shifted system, glued window by window from s = T.

    The first window spans ``window_steps`` knot intervals (the whole horizon by
    default). When the update ratio of a window reaches the threshold from the
    second iteration on, the window is halved and restarted.

    Raises:
        NoContraction: Update ratio >= 1 once no further halving is possible.
        MaxIterExceeded: A window did not reach ``tol`` within ``max_iter`` sweeps.
    """
    tol = PICARD["tol"] if tol is None else tol
    max_iter = PICARD["max_iter"] if max_iter is None else max_iter
    threshold = PICARD["ratio_threshold"]
    started = time.perf_counter()
    system = _ShiftedSystem(p, grid, full)
    valid = _validity(system)
    theta_tilde = np.zeros(system.shape)
    steps = grid.n_knots - 1 if window_steps is None else int(window_steps)
    halvings = 0
    windows = []
    total_iterations = 0

    j1 = grid.n_knots - 1
    while j1 > 0:
        j0 = max(j1 - steps, 0)
        theta_tilde[:, j0:j1] = theta_tilde[:, j1:j1 + 1]
        previous_update = None
        restart = False
        for iteration in range(1, max_iter + 1):
            updated = _picard_map(system, theta_tilde, (j0, j1), coupling)
            update = _masked_sup(updated[:, j0:j1] - theta_tilde[:, j0:j1], valid[:, j0:j1])
            theta_tilde[:, j0:j1] = updated[:, j0:j1]
            total_iterations += 1
            if update < tol:
                windows.append({"start": float(grid.knots[j0]), "end": float(grid.knots[j1]), "iterations": iteration})
                log.debug(f"window [{grid.knots[j0]:.4g}, {grid.knots[j1]:.4g}] converged in {iteration} sweeps")
                break
            if previous_update is not None and previous_update > 0.0:
                ratio = update / previous_update
                if ratio >= threshold:
                    if steps > 1 and halvings < PICARD["max_halvings"]:
                        steps = max(steps // 2, 1)
                        halvings += 1
                        restart = True
                        log.info(f"update ratio {ratio:.3f} on [{grid.knots[j0]:.4g}, {grid.knots[j1]:.4g}]; "
                                 f"halving window to {steps} steps")
                        break
                    if ratio >= 1.0:
                        raise NoContraction(f"Picard update ratio {ratio:.3f} >= 1 with a {steps}-step window")
            previous_update = update
        else:
            raise MaxIterExceeded(f"Picard window [{grid.knots[j0]:.4g}, {grid.knots[j1]:.4g}] "
                                  f"did not converge in {max_iter} iterations")
        if restart:
            continue
        j1 = j0

    values = theta_tilde + system.psi[:, None]
    values[~valid] = np.nan
    wall = time.perf_counter() - started
    log.info(f"Solved '{p.name}' with {len(windows)} windows and {total_iterations} sweeps in {wall:.2f}s")
    return ThetaField(
        grid=grid, values=values, depends_on_t=system.depends_on_t, depends_on_xi=system.depends_on_xi,
        problem_name=p.name,
        scheme={"backend": "picard", "windows": windows, "iterations": total_iterations,
                "window_steps": steps, "wall_time": wall},
        tolerance=tol + grid.ds ** 2 + grid.h ** 2,
    )


def _smooth_random_field(rng: np.random.Generator, system: _ShiftedSystem, start: int) -> np.ndarray:
    """Sum of random Fourier modes in x and ξ damped by (T - s), zero at T and below ``start``."""
    grid = system.grid
    knots = grid.knots
    damping = np.clip(grid.horizon - knots, 0.0, None)
    damping[:start] = damping[start]
    field = np.zeros(system.shape)
    for _ in range(3):
        k, phase, amplitude = rng.uniform(0.2, 1.0), rng.uniform(0.0, 2.0 * np.pi), rng.normal()
        wave = np.sin(k * grid.x + phase)
        t_mode = 1.0 + 0.1 * rng.normal() * np.squeeze(system.t, axis=(1, 2))
        xi_mode = 1.0 + 0.1 * np.cos(k * np.squeeze(system.xi, axis=(0, 2, 3)))
        field += amplitude * (t_mode[:, None, None, None] * damping[None, :, None, None]
                              * xi_mode[None, None, :, None] * wave[None, None, None, :])[..., None]
    return field


def picard_contraction_ratio(p: Problem, grid: TriangleGrid, window_steps: int, pairs: int = 3,
                             seed: int = 0, coupling: Optional[Coupling] = None) -> float:
    """
    Largest measured ‖S[θ] - S[θ̂]‖_X / ‖θ - θ̂‖_X over random smooth pairs on the
    window [T - δ, T] spanning ``window_steps`` knot intervals.
    """
    system = _ShiftedSystem(p, grid)
    j1 = grid.n_knots - 1
    j0 = max(j1 - int(window_steps), 0)
    S = float(grid.knots[j0])
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(pairs):
        first = _smooth_random_field(rng, system, j0)
        second = _smooth_random_field(rng, system, j0)
        mapped = _picard_map(system, first, (j0, j1), coupling) - _picard_map(system, second, (j0, j1), coupling)
        image = ThetaField(grid=grid, values=mapped, depends_on_t=system.depends_on_t,
                           depends_on_xi=system.depends_on_xi)
        source = ThetaField(grid=grid, values=first - second, depends_on_t=system.depends_on_t,
                            depends_on_xi=system.depends_on_xi)
        ratio = xnorm(image, S).value / xnorm(source, S).value
        worst = max(worst, ratio)
    log.info(f"contraction ratio {worst:.4g} on a {j1 - j0}-step window (S={S:.4g})")
    return worst
