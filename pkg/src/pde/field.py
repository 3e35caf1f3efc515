"""Grid fields Θ(t, s, ξ, x) of the Type-I representation."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Union

import numpy as np
import pandas as pd

from src.pde.grid import TriangleGrid
from src.utils.errors import GridMismatch
from src.utils.io import load_columnar, save_columnar, write_table

logger = logging.getLogger(__name__)


def bilinear(data: np.ndarray, grid: TriangleGrid, rows, s_index, xi, x, depends_on_xi: bool) -> np.ndarray:
    """Gather data[row, s, ξ, x, :] with linear weights in ξ (if stored) and x."""
    s_index = np.asarray(s_index)
    kx, wx, _ = grid.locate(x)
    wx = wx[..., None]
    if depends_on_xi:
        kxi, wxi, _ = grid.locate(xi)
    else:
        kxi = np.zeros(np.shape(xi), dtype=int)
    low = (1.0 - wx) * data[rows, s_index, kxi, kx] + wx * data[rows, s_index, kxi, kx + 1]
    if not depends_on_xi:
        return low
    high = (1.0 - wx) * data[rows, s_index, kxi + 1, kx] + wx * data[rows, s_index, kxi + 1, kx + 1]
    wxi = wxi[..., None]
    return (1.0 - wxi) * low + wxi * high


@dataclass(eq=False)
class ThetaField:
    """
    Values Θ[t_i, s_j, ξ_k, x_l, :] on a TriangleGrid.

    The t axis has length 1 when ``depends_on_t`` is False (every t shares one
    slice) and likewise the ξ axis for ``depends_on_xi``. Entries with s_j < t_i
    are NaN.
    """

    grid: TriangleGrid
    values: np.ndarray
    depends_on_t: bool = True
    depends_on_xi: bool = True
    problem_name: str = ""
    scheme: Dict[str, Any] = field(default_factory=dict)
    tolerance: float = 0.0
    _gradient: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        expected = (self.grid.n_knots if self.depends_on_t else 1, self.grid.n_knots,
                    self.grid.n_space if self.depends_on_xi else 1, self.grid.n_space)
        if self.values.ndim != 5 or self.values.shape[:4] != expected:
            raise GridMismatch(f"Theta values have shape {self.values.shape}, grid expects {expected} + (m,)")

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    def row(self, t_index):
        """Storage row of t-knot indices."""
        return np.asarray(t_index) * int(self.depends_on_t)

    def column(self, xi_index):
        return np.asarray(xi_index) * int(self.depends_on_xi)

    def valid_mask(self) -> np.ndarray:
        """(rows, N_s) mask of stored entries with s_j >= t_i."""
        knots = self.grid.knots
        if not self.depends_on_t:
            return np.ones((1, knots.size), dtype=bool)
        return knots[None, :] >= knots[:, None] - 1e-12

    @property
    def gradient(self) -> np.ndarray:
        """Θ_x by central differences (second-order one-sided at the ends)."""
        if self._gradient is None:
            self._gradient = np.gradient(self.values, self.grid.h, axis=3, edge_order=2)
        return self._gradient

    @property
    def second_gradient(self) -> np.ndarray:
        return np.gradient(self.gradient, self.grid.h, axis=3, edge_order=2)

    def _diagonal_of(self, data: np.ndarray) -> np.ndarray:
        s_index = np.arange(self.grid.n_knots)[:, None]
        x_index = np.arange(self.grid.n_space)[None, :]
        return data[self.row(s_index), s_index, self.column(x_index), x_index]

    def diagonal(self) -> np.ndarray:
        """u[s_j, x_l] = Θ[s_j, s_j, x_l, x_l], shape (N_s, N_x, m)."""
        return self._diagonal_of(self.values)

    def diagonal_gradient(self) -> np.ndarray:
        """Θ_x[s_j, s_j, x_l, x_l]."""
        return self._diagonal_of(self.gradient)

    def interpolate(self, t_index, s_index, xi, x, gradient: bool = False) -> np.ndarray:
        """
        Bilinear interpolation in (ξ, x) at knot pairs (t_i, s_j).

        Args:
            t_index (int | array): t-knot indices.
            s_index (int | array): s-knot indices, broadcastable with ``t_index``.
            xi (float | array): ξ points (n = 1, no trailing axis).
            x (float | array): x points.
            gradient (bool): Interpolate Θ_x instead of Θ.

        Returns:
            np.ndarray: Broadcast shape of the arguments + (m,).
        """
        data = self.gradient if gradient else self.values
        return bilinear(data, self.grid, self.row(t_index), s_index, xi, x, self.depends_on_xi)

    @classmethod
    def from_function(cls, grid: TriangleGrid, fn: Callable, m: int = 1, depends_on_t: bool = True,
                      depends_on_xi: bool = True, name: str = "closed-form") -> "ThetaField":
        """Sample fn(t, s, ξ, x) on the grid (ξ and x carry a trailing n = 1 axis)."""
        t = grid.knots if depends_on_t else np.zeros(1)
        xi = grid.x if depends_on_xi else np.zeros(1)
        shape = (t.size, grid.n_knots, xi.size, grid.n_space, m)
        values = fn(t[:, None, None, None], grid.knots[None, :, None, None],
                    xi[None, None, :, None, None], grid.x[None, None, None, :, None])
        values = np.array(np.broadcast_to(np.asarray(values, dtype=float), shape))
        result = cls(grid=grid, values=values, depends_on_t=depends_on_t, depends_on_xi=depends_on_xi,
                     problem_name=name, scheme={"backend": "closed-form"})
        result.values[~result.valid_mask()] = np.nan
        return result

    def save(self, path: Union[str, Path]) -> Path:
        header = {
            "kind": "theta_field",
            "depends_on_t": self.depends_on_t,
            "depends_on_xi": self.depends_on_xi,
            "alpha": self.grid.alpha,
            "problem": self.problem_name,
            "scheme": self.scheme,
            "tolerance": self.tolerance,
        }
        return save_columnar(path, {"values": self.values, "knots": self.grid.knots, "x": self.grid.x}, header)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ThetaField":
        columns, header = load_columnar(path, kind="theta_field")
        grid = TriangleGrid(knots=columns["knots"], x=columns["x"], alpha=header["alpha"])
        return cls(grid=grid, values=columns["values"], depends_on_t=header["depends_on_t"],
                   depends_on_xi=header["depends_on_xi"], problem_name=header["problem"],
                   scheme=header["scheme"], tolerance=header["tolerance"])

    def export_diagonal(self, path: Union[str, Path], config_hash: Optional[str] = None) -> Path:
        """CSV of u(s, x) with one row per (s, x) node."""
        u = self.diagonal()
        s_mesh, x_mesh = np.meshgrid(self.grid.knots, self.grid.x, indexing="ij")
        frame = pd.DataFrame({"s": s_mesh.ravel(), "x": x_mesh.ravel()})
        for component in range(self.m):
            frame[f"u_{component}"] = u[..., component].ravel()
        return write_table(frame, path, config_hash=config_hash)
