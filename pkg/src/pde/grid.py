"""Shared grids and the tridiagonal backward stepper of the representation PDEs."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.linalg import LinAlgError, solve_banded

from src.config.settings import HOLDER, SOLVER
from src.model.problem import SdeModel
from src.utils.errors import GridMismatch, TridiagonalSingular

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TriangleGrid:
    """
    Shared knots for t and s plus one uniform spatial grid for x and ξ.

    Args:
        knots (np.ndarray): Increasing time knots 0 = s_0 < ... < s_N = T. A single
            knot at 0 describes the degenerate horizon T = 0.
        x (np.ndarray): Uniform spatial grid on [-R, R].
        alpha (float): Hölder exponent used by the diagnostics.
    """

    knots: np.ndarray
    x: np.ndarray
    alpha: float = HOLDER["alpha"]

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        x = np.array(self.x, dtype=float)
        if knots.ndim != 1 or knots.size == 0:
            raise GridMismatch("Time knots must be a non-empty vector")
        if knots.size == 1 and knots[0] != 0.0:
            raise GridMismatch(f"A single-knot grid must sit at 0 (horizon T=0), got {knots[0]}")
        if np.any(np.diff(knots) <= 0.0):
            raise GridMismatch("Time knots must be strictly increasing")
        if x.ndim != 1 or x.size < 5:
            raise GridMismatch("The spatial grid needs at least five points")
        steps = np.diff(x)
        if np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
            raise GridMismatch("The spatial grid must be uniform and increasing")
        if not 0.0 < self.alpha < 1.0:
            raise GridMismatch(f"Hölder exponent must lie in (0, 1), got {self.alpha}")
        knots.setflags(write=False)
        x.setflags(write=False)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "x", x)

    @classmethod
    def uniform(cls, horizon: float = None, steps: int = None, space_points: int = None,
                radius: float = None, alpha: float = None) -> "TriangleGrid":
        """Uniform knots on [0, T] and a uniform x-grid on [-R, R] (defaults from settings)."""
        horizon = SOLVER["horizon"] if horizon is None else float(horizon)
        steps = SOLVER["time_steps"] if steps is None else int(steps)
        space_points = SOLVER["space_points"] if space_points is None else int(space_points)
        radius = SOLVER["radius"] if radius is None else float(radius)
        if horizon == 0.0:
            knots = np.zeros(1)
        else:
            knots = np.linspace(0.0, horizon, steps + 1)
            knots[-1] = horizon
        return cls(knots=knots, x=np.linspace(-radius, radius, space_points),
                   alpha=HOLDER["alpha"] if alpha is None else alpha)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def n_knots(self) -> int:
        return self.knots.size

    @property
    def n_space(self) -> int:
        return self.x.size

    @property
    def h(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def radius(self) -> float:
        return float(self.x[-1])

    @property
    def ds(self) -> float:
        """Largest time step (0 for the degenerate grid)."""
        return float(np.diff(self.knots).max()) if self.knots.size > 1 else 0.0

    def knot_index(self, value: float, atol: float = 1e-10) -> int:
        """Index of a knot; GridMismatch if ``value`` is not a knot."""
        position = int(np.argmin(np.abs(self.knots - value)))
        if abs(self.knots[position] - value) > atol:
            raise GridMismatch(f"{value} is not a knot of the time grid")
        return position

    def locate(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Linear-interpolation cells of points on the x-grid.

        Returns:
            Tuple: left index, weight of the right neighbour in [0, 1], and a mask of
            points lying inside [-R, R]. Outside points are clamped to the edge cell.
        """
        points = np.asarray(points, dtype=float)
        h = self.h
        inside = (points >= self.x[0] - 1e-12) & (points <= self.x[-1] + 1e-12)
        index = np.clip(np.floor((points - self.x[0]) / h).astype(int), 0, self.x.size - 2)
        weight = np.clip((points - self.x[index]) / h, 0.0, 1.0)
        return index, weight, inside


class BackwardStepper:
    """
    One backward step of v_s + a v_xx + b v_x + F = 0 on the x-grid.

    The θ-weighted scheme solves
    (I - θΔs L_j) v_j = v_{j+1} + (1-θ)Δs L_{j+1} v_{j+1} + Δs F
    with L = a D2 + b D1 on interior nodes and linear extrapolation
    (second derivative zero) at both ends of the grid.
    """

    def __init__(self, x: np.ndarray, coefficients: Callable[[float], Tuple[np.ndarray, np.ndarray]],
                 theta: Optional[float] = None):
        """
        Args:
            x (np.ndarray): Uniform spatial grid.
            coefficients (Callable): s -> (a, b), each broadcastable to the grid.
            theta (float, optional): Implicitness weight (1 implicit Euler, 0.5 Crank-Nicolson).
        """
        self.x = np.asarray(x, dtype=float)
        self.h = float(self.x[1] - self.x[0])
        self.coefficients = coefficients
        self.theta = SOLVER["theta"] if theta is None else float(theta)
        if not 0.5 <= self.theta <= 1.0:
            raise GridMismatch(f"theta must lie in [0.5, 1], got {self.theta}")

    @classmethod
    def from_model(cls, model: SdeModel, x: np.ndarray, theta: Optional[float] = None) -> "BackwardStepper":
        model.require_scalar_state()
        points = np.asarray(x, dtype=float)[:, None]

        def coefficients(s):
            a = model.diffusion_coefficient(s, points)
            b = model.drift(s, points)[..., 0]
            return a, b

        return cls(x, coefficients, theta)

    @classmethod
    def constant(cls, a: float, b: float, x: np.ndarray, theta: Optional[float] = None) -> "BackwardStepper":
        def coefficients(s):
            return a, b

        return cls(x, coefficients, theta)

    def _grid_coefficients(self, s: float) -> Tuple[np.ndarray, np.ndarray]:
        a, b = self.coefficients(s)
        size = self.x.size
        return np.broadcast_to(np.asarray(a, dtype=float), (size,)), np.broadcast_to(np.asarray(b, dtype=float), (size,))

    def apply_operator(self, values: np.ndarray, s: float) -> np.ndarray:
        """L v at interior nodes for values (..., Nx, m); boundary rows are zero."""
        a, b = self._grid_coefficients(s)
        h = self.h
        out = np.zeros_like(values)
        centre = values[..., 1:-1, :]
        second = (values[..., 2:, :] - 2.0 * centre + values[..., :-2, :]) / h ** 2
        first = (values[..., 2:, :] - values[..., :-2, :]) / (2.0 * h)
        out[..., 1:-1, :] = a[1:-1, None] * second + b[1:-1, None] * first
        return out

    def _banded(self, s: float, ds: float) -> np.ndarray:
        a, b = self._grid_coefficients(s)
        h = self.h
        lower = self.theta * ds * (a[1:-1] / h ** 2 - b[1:-1] / (2.0 * h))
        upper = self.theta * ds * (a[1:-1] / h ** 2 + b[1:-1] / (2.0 * h))
        diag = 1.0 + lower + upper
        # boundary rows absorb the extrapolated end values
        diag[0] = 1.0 - lower[0] + upper[0]
        diag[-1] = 1.0 - upper[-1] + lower[-1]
        sub = -lower.copy()
        sup = -upper.copy()
        sup[0] = lower[0] - upper[0]
        sub[-1] = upper[-1] - lower[-1]
        size = diag.size
        banded = np.zeros((3, size))
        banded[0, 1:] = sup[:-1]
        banded[1] = diag
        banded[2, :-1] = sub[1:]
        return banded

    def step(self, values: np.ndarray, s_now: float, s_next: float, source: Optional[np.ndarray] = None) -> np.ndarray:
        """
        Advance values (..., Nx, m) known at s_next down to s_now.

        Args:
            values (np.ndarray): Field at s_{j+1}, x on axis -2.
            s_now (float): Target level s_j.
            s_next (float): Level of ``values``.
            source (np.ndarray, optional): F broadcastable to ``values``.

        Returns:
            np.ndarray: Field at s_j with extrapolated boundary values.

        Raises:
            TridiagonalSingular: The banded solve failed.
        """
        ds = s_next - s_now
        rhs = values.copy()
        if self.theta < 1.0:
            rhs += (1.0 - self.theta) * ds * self.apply_operator(values, s_next)
        if source is not None:
            rhs = rhs + ds * source
        interior = np.moveaxis(rhs[..., 1:-1, :], -2, 0)
        shape = interior.shape
        try:
            solved = solve_banded((1, 1), self._banded(s_now, ds), interior.reshape(shape[0], -1),
                                  check_finite=False)
        except (LinAlgError, ValueError) as exc:
            raise TridiagonalSingular(f"Tridiagonal solve failed at s={s_now:.6g}: {exc}")
        result = np.empty_like(rhs)
        result[..., 1:-1, :] = np.moveaxis(solved.reshape(shape), 0, -2)
        result[..., 0, :] = 2.0 * result[..., 1, :] - result[..., 2, :]
        result[..., -1, :] = 2.0 * result[..., -2, :] - result[..., -3, :]
        return result
