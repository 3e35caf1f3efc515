"""Partition cascade: frozen-t representation fields Θ^k and their step processes.

For a partition 0 = t_0 < ... < t_N = T, Θ^k(s, ξ, x) solves on [t_k, T]
    Θ^k_s + a Θ^k_xx + b Θ^k_x + g(t_k, s, ξ, x, y, Θ^k_x σ) = 0,  Θ^k(T) = ψ(t_k, ξ, x)
with y = Θ^ℓ(s, x, x) on [t_ℓ, t_{ℓ+1}) for ℓ > k and the self-coupling
y = Θ^k(s, ξ, x) on [t_k, t_{k+1}). Intervals are left-closed, the last one closed.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config.settings import SIMULATION, SOLVER
from src.model.problem import Problem, SdeModel
from src.pde.field import ThetaField, bilinear
from src.pde.grid import BackwardStepper, TriangleGrid
from src.pde.type1 import solve_type1_fd
from src.representation.evaluate import evaluate_type1
from src.representation.pair import SolutionPair, domain_mask, grid_positions
from src.sde.simulator import PathEnsemble, TimeGrid, simulate
from src.utils.convergence import loglog_slope
from src.utils.errors import ConfigurationError, GridMismatch, NonFiniteField
from src.utils.logger import SolverLogger

logger = logging.getLogger(__name__)
log = SolverLogger("cascade", "fd")


@dataclass(frozen=True, eq=False)
class Partition:
    """Knots 0 = t_0 < ... < t_N = T of the cascade."""

    knots: np.ndarray

    def __post_init__(self):
        knots = np.array(self.knots, dtype=float)
        if knots.ndim != 1 or knots.size < 2:
            raise GridMismatch("A partition needs at least two knots")
        if knots[0] != 0.0:
            raise GridMismatch(f"A partition starts at 0, got {knots[0]}")
        if np.any(np.diff(knots) <= 0.0):
            raise GridMismatch("Partition knots must be strictly increasing")
        knots.setflags(write=False)
        object.__setattr__(self, "knots", knots)

    @classmethod
    def uniform(cls, horizon: float, N: int) -> "Partition":
        knots = np.linspace(0.0, horizon, int(N) + 1)
        knots[-1] = horizon
        return cls(knots)

    @property
    def N(self) -> int:
        return self.knots.size - 1

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def mesh(self) -> float:
        """‖Π‖ = max(t_k - t_{k-1})."""
        return float(np.diff(self.knots).max())

    def interval_index(self, t) -> np.ndarray:
        """k with t in [t_k, t_{k+1}); T belongs to the last interval."""
        t = np.asarray(t, dtype=float)
        index = np.searchsorted(self.knots, t + 1e-12, side="right") - 1
        return np.clip(index, 0, self.N - 1)

    def tau(self, t) -> np.ndarray:
        """Knot floor τ(t) = t_k."""
        return self.knots[self.interval_index(t)]

    def tau_bar(self, t) -> np.ndarray:
        """Knot ceiling τ̄(t) = t_{k+1}."""
        return self.knots[self.interval_index(t) + 1]

    def indices_in(self, grid_knots: np.ndarray) -> np.ndarray:
        """Positions of the partition knots in a solver grid."""
        return TimeGrid(self.knots).indices_in(grid_knots)


@dataclass(eq=False)
class CascadeField:
    """
    Per-interval fields Θ^k[s_j, ξ_l, x_l, :] on a shared grid.

    Level k holds NaN below its start knot t_k. The ξ axis has length 1 for
    problems whose data ignore ξ.
    """

    partition: Partition
    grid: TriangleGrid
    fields: List[np.ndarray]
    depends_on_xi: bool
    problem_name: str = ""
    scheme: Dict[str, Any] = field(default_factory=dict)
    _cache: Dict[Any, np.ndarray] = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self.knot_indices = self.partition.indices_in(self.grid.knots)
        self.level_interval = self.partition.interval_index(self.grid.knots)
        columns = self.grid.n_space if self.depends_on_xi else 1
        for k, values in enumerate(self.fields):
            if values.shape[:3] != (self.grid.n_knots, columns, self.grid.n_space):
                raise GridMismatch(f"Cascade level {k} has shape {values.shape}")

    @property
    def m(self) -> int:
        return self.fields[0].shape[-1]

    def column(self, xi_index):
        return np.asarray(xi_index) * int(self.depends_on_xi)

    def gradient(self, k: int) -> np.ndarray:
        key = ("gradient", k)
        if key not in self._cache:
            self._cache[key] = np.gradient(self.fields[k], self.grid.h, axis=2, edge_order=2)
        return self._cache[key]

    def level_diagonal(self, k: int) -> np.ndarray:
        """Θ^k(s_j, x_l, x_l), shape (N_s, N_x, m)."""
        space = np.arange(self.grid.n_space)
        return self.fields[k][:, self.column(space), space]

    def assembled_diagonal(self) -> np.ndarray:
        """u^Π(s_j, x_l) = Θ^{ℓ(s_j)}(s_j, x_l, x_l)."""
        space = np.arange(self.grid.n_space)
        rows = [self.fields[k][j, self.column(space), space] for j, k in enumerate(self.level_interval)]
        return np.stack(rows)

    def jumps(self) -> np.ndarray:
        """max |Θ^k(t_k, ξ, x) - Θ^{k-1}(t_k, ξ, x)| at each internal knot t_1..t_{N-1}."""
        out = np.zeros(self.partition.N - 1)
        for k in range(1, self.partition.N):
            j = self.knot_indices[k]
            out[k - 1] = float(np.nanmax(np.abs(self.fields[k][j] - self.fields[k - 1][j])))
        return out

    def knot_mismatch(self) -> float:
        """
        Largest gap between Θ^k at an internal knot t_ℓ (ℓ > k) and the linear
        extrapolation of its two right neighbours.
        """
        worst = 0.0
        last = self.grid.n_knots - 1
        for k in range(self.partition.N):
            for ell in range(k + 1, self.partition.N):
                j = self.knot_indices[ell]
                if j + 2 > last:
                    continue
                values = self.fields[k]
                extrapolated = 2.0 * values[j + 1] - values[j + 2]
                worst = max(worst, float(np.max(np.abs(values[j] - extrapolated))))
        return worst

    def _stacked(self, gradient: bool) -> np.ndarray:
        key = ("stacked", gradient)
        if key not in self._cache:
            self._cache[key] = np.stack([self.gradient(level) if gradient else self.fields[level]
                                        for level in range(self.partition.N)])
        return self._cache[key]

    def interpolate(self, k, s_index, xi, x, gradient: bool = False) -> np.ndarray:
        """Θ^k (or Θ^k_x) at knot s_j, linear in (ξ, x); ``k`` may be an index array."""
        stacked = self._stacked(gradient)
        return bilinear(stacked, self.grid, np.asarray(k), s_index, xi, x, self.depends_on_xi)

    def as_theta_field(self) -> ThetaField:
        """Θ^Π(t_i, s_j, ξ, x) = Θ^{k(t_i)}(s_j, ξ, x) as a full-t field."""
        interval = self.level_interval
        values = np.stack([self.fields[k] for k in interval])
        field_ = ThetaField(grid=self.grid, values=values, depends_on_t=True, depends_on_xi=self.depends_on_xi,
                            problem_name=self.problem_name, scheme=dict(self.scheme, backend="cascade"))
        field_.values[~field_.valid_mask()] = np.nan
        return field_


def build_cascade(p: Problem, pi: Partition, grid: TriangleGrid, source_scheme: Optional[str] = None,
                  theta: Optional[float] = None) -> CascadeField:
    """
    Solve Θ^{N-1}, ..., Θ^0 backward from s = T.

    Args:
        p (TypeIProblem): Problem (n = 1).
        pi (Partition): Partition whose knots are grid knots.
        grid (TriangleGrid): Solver grid.
        source_scheme (str, optional): ``lagged`` or ``heun``.
        theta (float, optional): Implicitness weight.

    Returns:
        CascadeField: The per-interval fields.

    Raises:
        GridMismatch: A partition knot is not a grid knot.
        NonFiniteField: A level blew up.
    """
    if p.kind != "I":
        raise ConfigurationError("The partition cascade is defined for Type-I problems")
    p.model.require_scalar_state()
    scheme = source_scheme or SOLVER["source_scheme"]
    if scheme not in ("lagged", "heun"):
        raise ConfigurationError(f"Unknown source scheme '{scheme}' (lagged | heun)")
    started = time.perf_counter()
    knot_indices = pi.indices_in(grid.knots)
    level_interval = pi.interval_index(grid.knots)
    knots = grid.knots
    xi = (grid.x if p.depends_on_xi else np.zeros(1))[:, None, None]
    x = grid.x[None, :, None]
    space = np.arange(grid.n_space)
    columns = space if p.depends_on_xi else np.zeros(grid.n_space, dtype=int)
    stepper = BackwardStepper.from_model(p.model, grid.x, theta)
    fields: List[Optional[np.ndarray]] = [None] * pi.N
    diagonals: Dict[int, np.ndarray] = {}

    for k in range(pi.N - 1, -1, -1):
        t_k = float(pi.knots[k])

        def source(level_values: np.ndarray, j: int) -> np.ndarray:
            s = float(knots[j])
            ell = int(level_interval[j])
            # later intervals feed their diagonal Θ^ℓ(s, x, x); the own interval couples to Θ^k(s, ξ, x)
            y = diagonals[ell][j][None] if ell > k else level_values
            sigma = p.model.diffusion(s, grid.x[:, None])[:, 0, :]
            z = np.gradient(level_values, grid.h, axis=1, edge_order=2)[..., None] * sigma[None, :, None, :]
            return p.generator(t_k, s, xi, x, y, z)

        values = np.full((grid.n_knots, xi.shape[0], grid.n_space, p.m), np.nan)
        values[-1] = p.terminal(t_k, xi, x)
        for j in range(grid.n_knots - 2, knot_indices[k] - 1, -1):
            explicit = source(values[j + 1], j + 1)
            current = stepper.step(values[j + 1], knots[j], knots[j + 1], explicit)
            if scheme == "heun":
                current = stepper.step(values[j + 1], knots[j], knots[j + 1],
                                       0.5 * (explicit + source(current, j)))
            if not np.all(np.isfinite(current)):
                raise NonFiniteField(f"Cascade level {k} became non-finite at s={knots[j]:.6g}")
            values[j] = current
        fields[k] = values
        diagonals[k] = values[:, columns, space]
        log.debug(f"level {k} solved on [{t_k:.4g}, {grid.horizon:.4g}]")

    wall = time.perf_counter() - started
    log.info(f"Cascade of '{p.name}' with N={pi.N} solved in {wall:.2f}s")
    return CascadeField(partition=pi, grid=grid, fields=fields, depends_on_xi=bool(p.depends_on_xi),
                        problem_name=p.name,
                        scheme={"source_scheme": scheme, "theta": stepper.theta, "wall_time": wall})


def _partition_positions(pi: Partition, ens: PathEnsemble) -> np.ndarray:
    try:
        return pi.indices_in(ens.times)
    except GridMismatch as exc:
        raise GridMismatch("Ensemble knots must contain the partition knots") from exc


def evaluate_cascade(c: CascadeField, ens: PathEnsemble, model: SdeModel) -> SolutionPair:
    """
    Step processes of the cascade along paths:
        Y^Π(s) = Θ^{ℓ(s)}(s, X(t_ℓ), X(s)),
        Z^Π(t, s) = Θ^{k(t)}_x(s, X(τ(t)), X(s)) σ(s, X(s)).

    Args:
        c (CascadeField): Solved cascade.
        ens (PathEnsemble): Paths on grid knots containing the partition knots.
        model (SdeModel): Forward coefficients supplying σ.
    """
    pi = c.partition
    positions = grid_positions(ens, c.grid)
    partition_positions = _partition_positions(pi, ens)
    included = domain_mask(ens, c.grid)
    X = ens.X[..., 0]
    paths, knots = X.shape
    interval = pi.interval_index(ens.times)
    anchor = X[:, partition_positions[interval]]
    Y = c.interpolate(interval[None, :], positions[None, :], anchor, X)
    sigma = model.diffusion(ens.times[None, :], ens.X)[:, :, 0, :]

    def upper(i: int) -> np.ndarray:
        out = np.full((paths, knots, c.m, sigma.shape[-1]), np.nan)
        k = int(interval[i])
        grad = c.interpolate(k, positions[i:][None, :], anchor[:, i][:, None], X[:, i:], gradient=True)
        out[:, i:] = grad[..., None] * sigma[:, i:, None, :]
        return out

    return SolutionPair(Y=Y, times=ens.times, m=c.m, d=sigma.shape[-1], upper=upper, included=included,
                        provenance=f"cascade:N={pi.N}")


@dataclass
class ErrorReport:
    """Cascade errors against the limit field for one partition."""

    N: int
    mesh: float
    y_error: float
    z_error: float
    l2_error: float
    adjacent: float
    jump_mean: float
    jump_max: float
    excluded: int

    def as_row(self) -> Dict[str, float]:
        return {"N": self.N, "mesh": self.mesh, "l2_error": self.l2_error, "y_error": self.y_error,
                "z_error": self.z_error, "adjacent": self.adjacent, "jump_mean": self.jump_mean,
                "jump_max": self.jump_max, "excluded": self.excluded}


def _adjacent_levels(c: CascadeField, ens: PathEnsemble, positions: np.ndarray,
                     partition_positions: np.ndarray, keep: np.ndarray) -> float:
    """max_k Ê sup_{s >= t_{k+1}} |Y^{k+1}(s) - Y^k(s)|² with Y^k(s) = Θ^k(s, X(t_k), X(s))."""
    X = ens.X[keep, :, 0]
    worst = 0.0
    for k in range(c.partition.N - 1):
        start = partition_positions[k + 1]
        grid_levels = positions[start:][None, :]
        upper = c.interpolate(k + 1, grid_levels, X[:, partition_positions[k + 1]][:, None], X[:, start:])
        lower = c.interpolate(k, grid_levels, X[:, partition_positions[k]][:, None], X[:, start:])
        gap = np.sum((upper - lower) ** 2, axis=-1).max(axis=1)
        worst = max(worst, float(gap.mean()))
    return worst


def cascade_error(c: CascadeField, reference: ThetaField, ens: PathEnsemble, model: SdeModel) -> ErrorReport:
    """
    Discrete L² distance of (Y^Π, Z^Π) from the limit pair (Y, Z):
        Ê Σ_i |Y^Π - Y|²(r_i) Δ_i + Ê Σ_i Σ_{j>=i} |Z^Π - Z|²(r_i, r_j) Δ_j Δ_i,
    plus the adjacent-level differences and the jump magnitudes at knots.
    """
    pi = c.partition
    cascade_pair = evaluate_cascade(c, ens, model)
    limit_pair = evaluate_type1(reference, ens, model)
    keep = cascade_pair.included & limit_pair.included
    dt = np.diff(ens.times)
    last = ens.times.size - 1

    y_gap = np.sum((cascade_pair.Y - limit_pair.Y)[keep] ** 2, axis=-1)
    y_error = float(np.mean(np.sum(y_gap[:, :last] * dt[None, :], axis=1)))
    z_error = 0.0
    for i in range(last):
        gap = cascade_pair.z_upper(i)[keep][:, i:last] - limit_pair.z_upper(i)[keep][:, i:last]
        squared = np.sum(gap ** 2, axis=(-2, -1))
        z_error += float(np.mean(np.sum(squared * dt[None, i:], axis=1))) * dt[i]

    positions = grid_positions(ens, c.grid)
    partition_positions = _partition_positions(pi, ens)
    adjacent = _adjacent_levels(c, ens, positions, partition_positions, keep)

    Y = cascade_pair.Y[keep]
    X = ens.X[keep, :, 0]
    jumps = []
    for k in range(1, pi.N):
        j = partition_positions[k]
        left = c.interpolate(k - 1, positions[j], X[:, partition_positions[k - 1]], X[:, j])
        jumps.append(float(np.mean(np.sqrt(np.sum((Y[:, j] - left) ** 2, axis=-1)))))
    jumps = np.asarray(jumps) if jumps else np.zeros(1)

    report = ErrorReport(N=pi.N, mesh=pi.mesh, y_error=y_error, z_error=z_error, l2_error=y_error + z_error,
                         adjacent=adjacent, jump_mean=float(jumps.mean()), jump_max=float(jumps.max()),
                         excluded=int(np.count_nonzero(~keep)))
    log.info(f"N={pi.N}: L2 error {report.l2_error:.3e}, adjacent {adjacent:.3e}, mean jump {report.jump_mean:.3e}")
    return report


@dataclass
class CascadeStudy:
    """Error reports of a partition sweep with the fitted log-log slopes."""

    reports: List[ErrorReport]
    slopes: Dict[str, float]

    def table(self) -> pd.DataFrame:
        frame = pd.DataFrame([report.as_row() for report in self.reports])
        for name, slope in self.slopes.items():
            frame[f"slope_{name}"] = slope
        return frame


def cascade_study(p: Problem, N_list: Sequence[int] = (4, 8, 16, 32), grid: Optional[TriangleGrid] = None,
                  n_paths: Optional[int] = None, seed: Optional[int] = None,
                  source_scheme: Optional[str] = None, threads: int = 1) -> CascadeStudy:
    """
    Cascade errors against the Type-I field for a sweep of uniform partitions.

    The limit field and the cascades share one grid (128 steps by default), so
    the measured errors isolate the partition effect.
    """
    grid = grid or TriangleGrid.uniform(SOLVER["horizon"], 128, 201, 6.0)
    n_paths = min(SIMULATION["n_paths"], 2000) if n_paths is None else int(n_paths)
    reference = solve_type1_fd(p, grid, source_scheme=source_scheme)
    ens = simulate(p.model, 0.0, TimeGrid(grid.knots), n_paths, seed=seed)

    def job(N: int) -> ErrorReport:
        pi = Partition.uniform(grid.horizon, N)
        return cascade_error(build_cascade(p, pi, grid, source_scheme), reference, ens, p.model)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            reports = list(pool.map(job, N_list))
    else:
        reports = [job(N) for N in N_list]

    meshes = [report.mesh for report in reports]
    slopes = {
        "l2": loglog_slope(meshes, [report.l2_error for report in reports]),
        "adjacent": loglog_slope(meshes, [report.adjacent for report in reports]),
        "jump": loglog_slope(meshes, [report.jump_mean for report in reports]),
    }
    log.info(f"Cascade study of '{p.name}': slopes {', '.join(f'{k}={v:.3f}' for k, v in slopes.items())}")
    return CascadeStudy(reports=reports, slopes=slopes)
