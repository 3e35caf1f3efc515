"""Path-wise verification of representation pairs: BSVIE and M-solution residuals."""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.config.settings import SIMULATION, SOLVER
from src.model.catalog import TestCatalogEntry
from src.model.problem import Problem, SdeModel
from src.pde.field import ThetaField
from src.pde.grid import TriangleGrid
from src.pde.picard import solve_type1_picard
from src.pde.type1 import solve_type1_fd
from src.pde.type2 import solve_type2
from src.representation.evaluate import evaluate_martingale_probe, evaluate_type1, evaluate_type2
from src.representation.pair import DiagonalFunction, SolutionPair
from src.sde.simulator import PathEnsemble, TimeGrid, restart_paths, simulate
from src.utils.convergence import loglog_slope
from src.utils.errors import ConfigurationError, MissingLowerTriangle
from src.utils.logger import SolverLogger

logger = logging.getLogger(__name__)
log = SolverLogger("representation", "mc")


@dataclass
class ResidualStats:
    """Per-knot and overall statistics of a residual R[path, knot, m]."""

    kind: str
    times: np.ndarray
    rms_per_knot: np.ndarray
    std_error_per_knot: np.ndarray
    rms: float
    std_error: float
    excluded: int
    n_paths: int
    centred_rms_per_knot: Optional[np.ndarray] = None
    bias_per_knot: Optional[np.ndarray] = None
    centred_rms: Optional[float] = None
    bias: Optional[float] = None

    @property
    def metric(self) -> float:
        """The refinement metric: centred RMS for M-residuals, raw RMS otherwise."""
        return self.centred_rms if self.centred_rms is not None else self.rms

    def table(self) -> pd.DataFrame:
        frame = pd.DataFrame({
            "knot": np.arange(self.times.size),
            "time": self.times,
            "rms": self.rms_per_knot,
            "std_error": self.std_error_per_knot,
            "excluded": self.excluded,
        })
        if self.centred_rms_per_knot is not None:
            frame["centred_rms"] = self.centred_rms_per_knot
            frame["bias"] = self.bias_per_knot
        return frame


def _stats(kind: str, residual: np.ndarray, times: np.ndarray, excluded: int) -> ResidualStats:
    squared = np.sum(residual ** 2, axis=-1)
    paths = max(squared.shape[0], 1)
    magnitude = np.sqrt(squared)
    return ResidualStats(
        kind=kind, times=times,
        rms_per_knot=np.sqrt(squared.mean(axis=0)),
        std_error_per_knot=magnitude.std(axis=0) / np.sqrt(paths),
        rms=float(np.sqrt(squared.mean())),
        std_error=float(magnitude.std() / np.sqrt(magnitude.size)),
        excluded=excluded, n_paths=squared.shape[0],
    )


def bsvie_residual(p: Problem, pair: SolutionPair, ens: PathEnsemble) -> ResidualStats:
    """
    R(t_i) = Y(t_i) - ψ(t_i, X(t_i), X(T)) - Σ_{j>=i} g(...) Δ_j + Σ_{j>=i} Z(t_i, r_j) ΔW_j.

    Both sums are left-endpoint sums over the ensemble knots. Type-II generators
    receive ζ = Z(r_j, t_i), read from the upper diagonal at j = i and from the
    lower triangle for j > i.
    """
    X, dW, times = ens.X, ens.dW, ens.times
    dt = np.diff(times)
    Y = pair.Y
    last = times.size - 1
    residual = np.zeros(Y.shape)
    for i in range(times.size):
        terminal = p.terminal(times[i], X[:, i], X[:, last])
        if i == last:
            residual[:, i] = Y[:, i] - terminal
            continue
        z = pair.z_upper(i)[:, i:last]
        args = (times[i], times[i:last][None, :], X[:, i][:, None, :], X[:, i:last], Y[:, i:last], z)
        if p.kind == "II":
            zeta = np.concatenate([z[:, :1], pair.z_lower_column(i)[:, i + 1:last]], axis=1)
            g = p.generator(*args, zeta)
        else:
            g = p.generator(*args)
        integral = np.sum(g * dt[i:][None, :, None], axis=1)
        ito = np.einsum("pjmd,pjd->pm", z, dW[:, i:])
        residual[:, i] = Y[:, i] - terminal - integral + ito
    stats = _stats("bsvie", residual[pair.included], times, pair.excluded_count)
    log.info(f"BSVIE residual of '{p.name}': RMS {stats.rms:.3e} over {stats.n_paths} paths")
    return stats


def msolution_residual(pair: SolutionPair, ens: PathEnsemble) -> ResidualStats:
    """
    M(t_i) = Y(t_i) - Ê[Y(t_i)] - Σ_{j<i} Z(t_i, r_j) ΔW_j with the plug-in mean.

    The raw RMS carries the O(n_paths^-1/2) plug-in bias; the centred RMS removes
    the per-knot mean of M, which is reported separately as ``bias``.

    Raises:
        MissingLowerTriangle: The pair has no Z below the diagonal.
    """
    if not pair.has_lower:
        raise MissingLowerTriangle(f"M-solution residual needs the lower triangle of Z ('{pair.provenance}')")
    keep = pair.included
    Y = pair.Y[keep]
    dW = ens.dW[keep]
    mean = Y.mean(axis=0)
    residual = np.empty(Y.shape)
    for i in range(pair.n_knots):
        ito = np.einsum("pjmd,pjd->pm", pair.z_lower(i)[keep][:, :i], dW[:, :i]) if i else 0.0
        residual[:, i] = Y[:, i] - mean[i] - ito
    bias = residual.mean(axis=0)
    centred = residual - bias
    stats = _stats("msolution", residual, ens.times, pair.excluded_count)
    centred_squared = np.sum(centred ** 2, axis=-1)
    stats.centred_rms_per_knot = np.sqrt(centred_squared.mean(axis=0))
    stats.bias_per_knot = np.sqrt(np.sum(bias ** 2, axis=-1))
    stats.centred_rms = float(np.sqrt(centred_squared.mean()))
    stats.bias = float(np.sqrt(np.mean(np.sum(bias ** 2, axis=-1))))
    log.info(f"M-solution residual ({pair.provenance}): centred RMS {stats.centred_rms:.3e}, bias {stats.bias:.3e}")
    return stats


@dataclass
class RefinementResult:
    """A Δt sweep of one residual."""

    name: str
    kind: str
    rows: List[Dict[str, Any]]
    slope: float
    exact: bool
    expected_rate: Optional[float] = None
    stats: List[ResidualStats] = field(default_factory=list, repr=False)

    def table(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows)


def _summarize(name: str, kind: str, dts: Sequence[float], stats: List[ResidualStats],
               expected_rate: Optional[float]) -> RefinementResult:
    metrics = [s.metric for s in stats]
    rows = [{"problem": name, "kind": kind, "dt": dt, "metric": metric, "rms": s.rms,
             "std_error": s.std_error, "excluded": s.excluded}
            for dt, metric, s in zip(dts, metrics, stats)]
    exact = all(metric < SOLVER["residual_floor"] for metric in metrics)
    slope = float("nan") if exact else loglog_slope(dts, metrics)
    log.info(f"{kind} residual sweep of '{name}': slope {slope:.3f} (exact={exact})")
    return RefinementResult(name=name, kind=kind, rows=rows, slope=slope, exact=exact,
                            expected_rate=expected_rate, stats=stats)


def _map_levels(job: Callable[[int], ResidualStats], steps: Sequence[int], threads: int) -> List[ResidualStats]:
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(job, steps))
    return [job(step) for step in steps]


def residual_refinement(entry: TestCatalogEntry, steps_list: Sequence[int] = (50, 100, 200),
                        n_paths: Optional[int] = None, seed: Optional[int] = None, space_points: int = 201,
                        radius: float = 8.0, horizon: float = 1.0, kind: str = "bsvie", backend: str = "fd",
                        source_scheme: Optional[str] = None, threads: int = 1) -> RefinementResult:
    """
    Solve, evaluate and verify a catalog problem for each time-step count.

    Args:
        entry (TestCatalogEntry): Catalog problem.
        steps_list (Sequence[int]): Knot interval counts on [0, T] (Δt = T / steps).
        horizon (float): T the entry was built for.
        kind (str): ``bsvie`` or ``msolution`` (Type-II only).
        backend (str): ``fd`` or ``picard`` for the Θ solves.
        threads (int): Refinement levels solved concurrently.

    Returns:
        RefinementResult: Rows, fitted slope and the exactness flag.
    """
    if kind not in ("bsvie", "msolution"):
        raise ConfigurationError(f"Unknown residual kind '{kind}' (bsvie | msolution)")
    p = entry.problem
    n_paths = SIMULATION["n_paths"] if n_paths is None else int(n_paths)

    def job(steps: int) -> ResidualStats:
        grid = TriangleGrid.uniform(horizon, steps, space_points, radius)
        ens = simulate(p.model, 0.0, TimeGrid(grid.knots), n_paths, seed=seed)
        if p.kind == "II":
            pair = evaluate_type2(solve_type2(p, grid, source_scheme=source_scheme), ens, p.model)
        else:
            theta = (solve_type1_picard(p, grid) if backend == "picard"
                     else solve_type1_fd(p, grid, source_scheme=source_scheme))
            pair = evaluate_type1(theta, ens, p.model)
        if kind == "msolution":
            return msolution_residual(pair, ens)
        return bsvie_residual(p, pair, ens)

    dts = [horizon / step for step in steps_list]
    return _summarize(entry.name, kind, dts, _map_levels(job, steps_list, threads), entry.residual_rate)


def probe_refinement(lam: DiagonalFunction, model: SdeModel, steps_list: Sequence[int] = (50, 100, 200),
                     n_paths: Optional[int] = None, seed: Optional[int] = None, space_points: int = 161,
                     radius: float = 8.0, horizon: float = 1.0, backend: Optional[str] = None,
                     threads: int = 1) -> RefinementResult:
    """Δt sweep of the M-solution residual of the martingale probe Y = Λ(t, X(t))."""
    n_paths = SIMULATION["n_paths"] if n_paths is None else int(n_paths)

    def job(steps: int) -> ResidualStats:
        grid = TriangleGrid.uniform(horizon, steps, space_points, radius)
        ens = simulate(model, 0.0, TimeGrid(grid.knots), n_paths, seed=seed)
        return msolution_residual(evaluate_martingale_probe(lam, model, grid, ens, backend), ens)

    dts = [horizon / step for step in steps_list]
    return _summarize(lam.name, "msolution", dts, _map_levels(job, steps_list, threads), 0.5)


@dataclass
class CrossCheck:
    """Sample mean of the restarted-path estimate against Θ(s, s, x, x)."""

    s: float
    x: float
    value: float
    estimate: float
    std_error: float
    allowance: float
    passed: bool


def feynman_kac_crosscheck(theta: ThetaField, p: Problem, s_index: int, x: float,
                           n_paths: Optional[int] = None, seed: Optional[int] = None) -> CrossCheck:
    """
    Restart paths at (s, x) and compare Ê[ψ(s, x, X(T)) + Σ g Δ] with Θ(s, s, x, x).

    The check passes within four standard errors plus the Δs bias of the
    left-endpoint time sum.
    """
    grid = theta.grid
    n_paths = SIMULATION["n_paths"] if n_paths is None else int(n_paths)
    s = float(grid.knots[s_index])
    ens = restart_paths(p.model, s, x, TimeGrid(grid.knots), n_paths, seed=seed)
    positions = ens.time_grid.indices_in(grid.knots)
    X = ens.X[..., 0]
    sigma = p.model.diffusion(ens.times[None, :], ens.X)[:, :, 0, :]
    Y = theta.interpolate(positions[None, :], positions[None, :], X, X)
    z = theta.interpolate(s_index, positions[None, :], x, X, gradient=True)[..., None] * sigma[:, :, None, :]
    dt = np.diff(ens.times)
    args = (s, ens.times[None, :-1], np.full((X.shape[0], 1, 1), x), ens.X[:, :-1], Y[:, :-1], z[:, :-1])
    g = p.generator(*args, np.zeros_like(z[:, :-1])) if p.kind == "II" else p.generator(*args)
    samples = p.terminal(s, np.array([x]), ens.X[:, -1]) + np.sum(g * dt[None, :, None], axis=1)
    estimate = float(samples[:, 0].mean())
    std_error = float(samples[:, 0].std() / np.sqrt(n_paths))
    value = float(theta.interpolate(s_index, s_index, x, x)[0])
    allowance = 4.0 * std_error + grid.ds
    passed = abs(estimate - value) <= allowance
    log.info(f"Feynman-Kac cross-check at (s={s:.3g}, x={x:.3g}): field {value:.6g}, "
             f"estimate {estimate:.6g} ± {std_error:.2g} ({'pass' if passed else 'FAIL'})")
    return CrossCheck(s=s, x=float(x), value=value, estimate=estimate, std_error=std_error,
                      allowance=allowance, passed=passed)
