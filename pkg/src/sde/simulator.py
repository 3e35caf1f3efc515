"""Euler-Maruyama simulation of the forward state equation."""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from src.config.settings import SIMULATION
from src.model.problem import SdeModel
from src.utils.errors import ConfigurationError, GridMismatch, NonFiniteState
from src.utils.io import load_columnar, save_columnar

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing knots r_0 < ... < r_J = T."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise GridMismatch("A time grid needs at least two knots")
        if np.any(np.diff(knots) <= 0.0):
            raise GridMismatch("Time grid knots must be strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, horizon: float, steps: int, start: float = 0.0) -> "TimeGrid":
        knots = np.linspace(start, horizon, int(steps) + 1)
        knots[-1] = horizon
        return cls(knots)

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def steps(self) -> int:
        return self.knots.size - 1

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.knots)

    @property
    def dt(self) -> float:
        """Largest step."""
        return float(self.increments.max())

    def refine(self, factor: int) -> "TimeGrid":
        """Split every step into ``factor`` equal substeps."""
        factor = int(factor)
        pieces = [np.linspace(a, b, factor + 1)[:-1] for a, b in zip(self.knots[:-1], self.knots[1:])]
        return TimeGrid(np.concatenate(pieces + [self.knots[-1:]]))

    def indices_in(self, other_knots: np.ndarray, atol: float = 1e-12) -> np.ndarray:
        """Positions of these knots inside ``other_knots``; GridMismatch if any is missing."""
        other_knots = np.asarray(other_knots, dtype=float)
        positions = np.searchsorted(other_knots, self.knots - atol)
        positions = np.clip(positions, 0, other_knots.size - 1)
        if not np.allclose(other_knots[positions], self.knots, rtol=0.0, atol=atol * 10):
            raise GridMismatch("Time grid knots are not a subset of the target knots")
        return positions

    def is_subgrid_of(self, other_knots: np.ndarray) -> bool:
        try:
            self.indices_in(other_knots)
        except GridMismatch:
            return False
        return True


@dataclass(eq=False)
class PathEnsemble:
    """Simulated paths X[path, time, n] and Brownian increments dW[path, time-1, d]."""

    X: np.ndarray
    dW: np.ndarray
    x0: np.ndarray
    seed: int
    time_grid: TimeGrid
    antithetic: bool = False
    first_path: int = 0
    wall_time: float = field(default=0.0, compare=False)

    @property
    def n_paths(self) -> int:
        return self.X.shape[0]

    @property
    def times(self) -> np.ndarray:
        return self.time_grid.knots


def _brownian_increments(seed: int, path_ids: np.ndarray, steps: np.ndarray, d: int) -> np.ndarray:
    """Standard normal draws keyed on (seed, path); each path owns its own counter-based stream."""
    draws = np.empty((path_ids.size, steps.size, d))
    for row, path in enumerate(path_ids):
        stream = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy=seed, spawn_key=(int(path),))))
        draws[row] = stream.standard_normal((steps.size, d))
    return draws * np.sqrt(steps)[None, :, None]


def simulate(model: SdeModel, x0, grid: TimeGrid, n_paths: int, seed: Optional[int] = None,
             antithetic: Optional[bool] = None, first_path: int = 0) -> PathEnsemble:
    """
    Simulate X_{j+1} = X_j + b(r_j,X_j)dt_j + sigma(r_j,X_j)dW_j.

    Args:
        model (SdeModel): Forward coefficients.
        x0 (float | array): Initial state, shape (n,) or scalar.
        grid (TimeGrid): Simulation knots.
        n_paths (int): Number of paths (>= 1).
        seed (int, optional): Ensemble seed (default from settings).
        antithetic (bool, optional): Pair path 2k+1 with the negated increments of path 2k.
        first_path (int): Index of the first path, so subsets of a larger ensemble can be rebuilt.

    Returns:
        PathEnsemble: The paths.

    Raises:
        NonFiniteState: A path blew up.
    """
    if n_paths < 1:
        raise ConfigurationError("n_paths must be at least 1")
    seed = SIMULATION["seed"] if seed is None else int(seed)
    antithetic = SIMULATION["antithetic"] if antithetic is None else bool(antithetic)
    started = time.perf_counter()

    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (model.n,)).copy()
    steps = grid.increments
    path_ids = np.arange(first_path, first_path + n_paths)
    if antithetic:
        keys = path_ids // 2
        unique_keys, inverse = np.unique(keys, return_inverse=True)
        base = _brownian_increments(seed, unique_keys, steps, model.d)
        dW = base[inverse]
        dW[path_ids % 2 == 1] *= -1.0
    else:
        dW = _brownian_increments(seed, path_ids, steps, model.d)

    X = np.empty((n_paths, steps.size + 1, model.n))
    X[:, 0] = x0
    for j, r in enumerate(grid.knots[:-1]):
        current = X[:, j]
        drift = model.drift(r, current)
        diffusion = model.diffusion(r, current)
        X[:, j + 1] = current + drift * steps[j] + np.einsum("pnd,pd->pn", diffusion, dW[:, j])
        if not np.all(np.isfinite(X[:, j + 1])):
            raise NonFiniteState(f"Euler-Maruyama paths left the finite range at step {j + 1} (t={grid.knots[j + 1]:.4g})")

    wall = time.perf_counter() - started
    logger.info(f"Simulated {n_paths} paths on {steps.size} steps (seed={seed}, antithetic={antithetic}) in {wall:.2f}s")
    return PathEnsemble(X=X, dW=dW, x0=x0, seed=seed, time_grid=grid, antithetic=antithetic,
                        first_path=first_path, wall_time=wall)


def restart_paths(model: SdeModel, s: float, x, grid: TimeGrid, n_paths: int,
                  seed: Optional[int] = None) -> PathEnsemble:
    """Simulate from (s, x) on the knots of ``grid`` lying in [s, T]."""
    knots = grid.knots[grid.knots >= s - 1e-12]
    if knots.size < 2 or abs(knots[0] - s) > 1e-9:
        raise GridMismatch(f"Restart time {s} is not an interior knot of the time grid")
    return simulate(model, x, TimeGrid(knots), n_paths, seed=seed, antithetic=False)


def increment_bound(ens: PathEnsemble) -> float:
    """
    Empirical K0 = max over knot pairs of E|X(s)-X(t)|^2 / |s-t|.

    The mean square increment is assembled from the centred covariance of the
    path values plus the squared mean difference, so all pairs cost one product.
    """
    X = ens.X
    times = ens.times
    if times.size < 2:
        raise GridMismatch("increment_bound needs at least two time knots")
    mean = X.mean(axis=0)
    centred = X - mean
    cov = np.tensordot(centred, centred, axes=([0, 2], [0, 2])) / X.shape[0]
    var = np.diag(cov)
    mean_sq = np.sum((mean[:, None, :] - mean[None, :, :]) ** 2, axis=-1)
    second = var[:, None] + var[None, :] - 2.0 * cov + mean_sq
    gaps = np.abs(times[:, None] - times[None, :])
    upper = np.triu_indices(times.size, k=1)
    return float(np.max(second[upper] / gaps[upper]))


def save_ensemble(ens: PathEnsemble, path: Union[str, Path]) -> Path:
    header = {
        "kind": "path_ensemble",
        "n": int(ens.X.shape[2]),
        "d": int(ens.dW.shape[2]),
        "n_paths": ens.n_paths,
        "seed": ens.seed,
        "antithetic": ens.antithetic,
        "first_path": ens.first_path,
        "x0": ens.x0.tolist(),
    }
    return save_columnar(path, {"X": ens.X, "dW": ens.dW, "knots": ens.times}, header)


def load_ensemble(path: Union[str, Path]) -> PathEnsemble:
    columns, header = load_columnar(path, kind="path_ensemble")
    return PathEnsemble(
        X=columns["X"], dW=columns["dW"], x0=np.asarray(header["x0"], dtype=float), seed=int(header["seed"]),
        time_grid=TimeGrid(columns["knots"]), antithetic=bool(header["antithetic"]),
        first_path=int(header["first_path"]),
    )
