"""Path-wise solution pairs (Y, Z) read off representation fields."""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from src.config.settings import SIMULATION
from src.pde.grid import TriangleGrid
from src.sde.simulator import PathEnsemble
from src.utils.errors import MissingLowerTriangle, PathOutsideDomain

logger = logging.getLogger(__name__)

# row(i) -> Z values of shape (paths, knots, m, d), NaN outside the row's triangle
ZRow = Callable[[int], np.ndarray]


@dataclass(eq=False)
class SolutionPair:
    """
    Y[path, knot, m] and the rows of Z(t_i, s_j) on an ensemble's knots.

    Z is held as row callables so the (paths, knots, knots) triangles are only
    materialized on request:
      - ``upper(i)``  -> Z(t_i, s_j) for j >= i
      - ``lower(i)``  -> Z(t_i, s_j) for j < i  (Type-II and probes)
      - ``lower_column(i)`` -> Z(r_j, t_i) for j > i, the ζ argument of Type-II generators
    """

    Y: Optional[np.ndarray]
    times: np.ndarray
    m: int
    d: int
    upper: Optional[ZRow] = None
    lower: Optional[ZRow] = None
    lower_column: Optional[ZRow] = None
    included: Optional[np.ndarray] = None
    provenance: str = ""
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if self.included is None and self.Y is not None:
            self.included = np.ones(self.Y.shape[0], dtype=bool)

    @property
    def n_knots(self) -> int:
        return self.times.size

    @property
    def has_lower(self) -> bool:
        return self.lower is not None

    @property
    def excluded_count(self) -> int:
        return int(np.count_nonzero(~self.included)) if self.included is not None else 0

    def z_upper(self, i: int) -> np.ndarray:
        if self.upper is None:
            raise MissingLowerTriangle(f"Solution pair '{self.provenance}' carries no upper triangle of Z")
        return self.upper(int(i))

    def z_lower(self, i: int) -> np.ndarray:
        if self.lower is None:
            raise MissingLowerTriangle(f"Solution pair '{self.provenance}' carries no lower triangle of Z")
        return self.lower(int(i))

    def z_lower_column(self, i: int) -> np.ndarray:
        if self.lower_column is None:
            raise MissingLowerTriangle(f"Solution pair '{self.provenance}' carries no lower triangle of Z")
        return self.lower_column(int(i))

    def _stack(self, name: str, row: Callable[[int], np.ndarray]) -> np.ndarray:
        if name not in self._cache:
            self._cache[name] = np.stack([row(i) for i in range(self.n_knots)], axis=1)
        return self._cache[name]

    @property
    def Z_upper(self) -> np.ndarray:
        """Z(t_i, s_j) for j >= i as (paths, t, s, m, d); NaN elsewhere."""
        return self._stack("upper", self.z_upper)

    @property
    def Z_lower(self) -> np.ndarray:
        """Z(t_i, s_j) for j < i as (paths, t, s, m, d); NaN elsewhere."""
        return self._stack("lower", self.z_lower)


@dataclass(frozen=True, eq=False)
class DiagonalFunction:
    """A continuous Λ(t, x) -> R^m, x carrying the trailing state axis."""

    fn: Callable
    m: int = 1
    name: str = "lambda"

    def __call__(self, t, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(t, x), dtype=float)
        return np.broadcast_to(out, np.broadcast_shapes(np.shape(t), x.shape[:-1]) + (self.m,))

    def on_grid(self, grid: TriangleGrid) -> np.ndarray:
        """Λ on the (s, x) nodes, shape (N_s, N_x, m)."""
        return np.array(self(grid.knots[:, None], grid.x[None, :, None]))


def grid_positions(ens: PathEnsemble, grid: TriangleGrid) -> np.ndarray:
    """Index of every ensemble knot inside the grid knots (GridMismatch if any is missing)."""
    return ens.time_grid.indices_in(grid.knots)


def domain_mask(ens: PathEnsemble, grid: TriangleGrid) -> np.ndarray:
    """
    Paths that stay inside the truncated spatial grid.

    Raises:
        PathOutsideDomain: More than the allowed fraction of paths left the grid.
    """
    X = ens.X[..., 0]
    inside = np.all((X >= grid.x[0]) & (X <= grid.x[-1]), axis=1)
    excluded = int(np.count_nonzero(~inside))
    if excluded:
        fraction = excluded / X.shape[0]
        if fraction > SIMULATION["max_excluded_fraction"]:
            raise PathOutsideDomain(
                f"{excluded} of {X.shape[0]} paths left [{grid.x[0]:.4g}, {grid.x[-1]:.4g}]",
                excluded=excluded, total=X.shape[0])
        logger.warning(f"Excluding {excluded} of {X.shape[0]} paths that left the spatial grid")
    return inside
