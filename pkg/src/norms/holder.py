"""Discrete parabolic Hölder norms, the X-norm of representation fields and window-scaling probes.

Seminorms are maxima of difference quotients over grid pairs. Time quotients use
every pair of knots; space quotients only pairs with |x - x'| <= 1. Grid quotients
underestimate the continuum seminorms and depend on the spacing, so every report
carries the smallest pair distance it used.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.config.settings import HOLDER
from src.pde.field import ThetaField
from src.pde.type1 import solve_linear_backward
from src.utils.convergence import loglog_slope
from src.utils.errors import ConfigurationError, GridMismatch, WindowOutsideGrid

logger = logging.getLogger(__name__)


def _batch_max(quotients: np.ndarray) -> np.ndarray:
    """Max over the last two axes ignoring NaN; empty or all-NaN batches give 0."""
    finite = np.where(np.isfinite(quotients), quotients, -np.inf)
    if finite.shape[-1] == 0 or finite.shape[-2] == 0:
        return np.zeros(finite.shape[:-2])
    best = finite.max(axis=(-2, -1))
    return np.where(np.isfinite(best), best, 0.0)


def sup_norm(phi: np.ndarray) -> np.ndarray:
    """|φ|^(0) per batch of (..., N_s, N_x)."""
    return _batch_max(np.abs(phi))


def time_seminorm(phi: np.ndarray, s: np.ndarray, exponent: float) -> Tuple[np.ndarray, float]:
    """
    max |φ(s',x) - φ(s,x)| / |s' - s|^exponent per batch.

    Returns:
        Tuple: batch maxima and the earlier time of the maximizing pair.
    """
    s = np.asarray(s, dtype=float)
    best = np.zeros(phi.shape[:-2])
    peak_value, peak_start = 0.0, float(s[0]) if s.size else 0.0
    for k in range(1, s.size):
        gaps = (s[k:] - s[:-k]) ** exponent
        quotients = np.abs(phi[..., k:, :] - phi[..., :-k, :]) / gaps[:, None]
        best = np.maximum(best, _batch_max(quotients))
        reduced = np.where(np.isfinite(quotients), quotients, -np.inf).reshape(-1, quotients.shape[-2], quotients.shape[-1])
        level_max = reduced.max(axis=(0, 2))
        if level_max.size and level_max.max() > peak_value:
            peak_value = float(level_max.max())
            peak_start = float(s[int(np.argmax(level_max))])
    return best, peak_start


def space_seminorm(phi: np.ndarray, x: np.ndarray, exponent: float,
                   max_distance: Optional[float] = None) -> Tuple[np.ndarray, float]:
    """
    max |φ(s,x') - φ(s,x)| / |x' - x|^exponent over pairs with |x' - x| <= max_distance.

    Returns:
        Tuple: batch maxima and the pair distance at which the overall maximum sits.
    """
    max_distance = HOLDER["max_space_distance"] if max_distance is None else max_distance
    h = float(x[1] - x[0])
    best = np.zeros(phi.shape[:-2])
    peak_value, peak_distance = 0.0, h
    k = 1
    while k < x.size and k * h <= max_distance + 1e-12:
        quotients = np.abs(phi[..., k:] - phi[..., :-k]) / (k * h) ** exponent
        level = _batch_max(quotients)
        best = np.maximum(best, level)
        if level.size and float(level.max()) > peak_value:
            peak_value = float(level.max())
            peak_distance = k * h
        k += 1
    return best, peak_distance


def parabolic_seminorm(phi: np.ndarray, s: np.ndarray, x: np.ndarray, alpha: float) -> np.ndarray:
    """⟨φ⟩^(α) = ⟨φ⟩_s^(α/2) + ⟨φ⟩_x^(α)."""
    return time_seminorm(phi, s, alpha / 2.0)[0] + space_seminorm(phi, x, alpha)[0]


def _derivative(values: np.ndarray, coordinates: np.ndarray, axis: int) -> np.ndarray:
    size = values.shape[axis]
    if size < 2:
        return np.zeros_like(values)
    return np.gradient(values, coordinates, axis=axis, edge_order=2 if size > 2 else 1)


@dataclass
class HolderReport:
    """Discrete norms of a grid function on a window [S, T]."""

    sup_norm: float
    time_seminorm: float
    space_seminorm: float
    holder_alpha: float
    holder_one_alpha: float
    holder_two_alpha: float
    window: Tuple[float, float]
    alpha: float
    min_pair_distance: float
    space_peak_distance: float
    time_peak_start: float
    components: Dict[str, float] = field(default_factory=dict)

    def as_row(self) -> Dict[str, float]:
        row = {
            "S": self.window[0], "T": self.window[1], "alpha": self.alpha,
            "sup": self.sup_norm, "time_seminorm": self.time_seminorm, "space_seminorm": self.space_seminorm,
            "holder_alpha": self.holder_alpha, "holder_one_alpha": self.holder_one_alpha,
            "holder_two_alpha": self.holder_two_alpha, "min_pair_distance": self.min_pair_distance,
            "space_peak_distance": self.space_peak_distance,
        }
        return row


def _window_slice(knots: np.ndarray, window: Optional[Tuple[float, float]]) -> Tuple[np.ndarray, Tuple[float, float]]:
    low, high = float(knots[0]), float(knots[-1])
    S, T = window if window is not None else (low, high)
    if S < low - 1e-12 or T > high + 1e-12 or S >= T:
        raise WindowOutsideGrid(f"Window [{S}, {T}] is not inside the grid [{low}, {high}]")
    keep = (knots >= S - 1e-12) & (knots <= T + 1e-12)
    return keep, (float(S), float(T))


def holder_report(phi: np.ndarray, knots: np.ndarray, x: np.ndarray, alpha: Optional[float] = None,
                  window: Optional[Tuple[float, float]] = None) -> HolderReport:
    """
    Hölder norms of φ(s, x) on a window.

    Args:
        phi (np.ndarray): Values on (knots, x), optionally with a trailing m = 1 axis.
        knots (np.ndarray): Time knots.
        x (np.ndarray): Uniform spatial grid.
        alpha (float, optional): Exponent in (0, 1).
        window (Tuple[float, float], optional): [S, T] (whole grid by default).

    Returns:
        HolderReport: Sup norms, seminorms and the composite norms.

    Raises:
        WindowOutsideGrid: The window is not covered by the knots.
    """
    alpha = HOLDER["alpha"] if alpha is None else float(alpha)
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 3:
        if phi.shape[-1] != 1:
            raise GridMismatch("holder_report takes scalar grid functions")
        phi = phi[..., 0]
    knots = np.asarray(knots, dtype=float)
    x = np.asarray(x, dtype=float)
    keep, window = _window_slice(knots, window)
    s = knots[keep]
    phi = phi[keep]
    h = float(x[1] - x[0])

    phi_x = _derivative(phi, x, axis=1)
    phi_xx = _derivative(phi_x, x, axis=1)
    phi_s = _derivative(phi, s, axis=0)

    sup = float(sup_norm(phi))
    sup_x = float(sup_norm(phi_x))
    sup_xx = float(sup_norm(phi_xx))
    sup_s = float(sup_norm(phi_s))
    time_half, time_peak = time_seminorm(phi, s, alpha / 2.0)
    space, space_peak = space_seminorm(phi, x, alpha)
    time_mixed = float(time_seminorm(phi, s, (1.0 + alpha) / 2.0)[0])
    gradient_parabolic = float(parabolic_seminorm(phi_x, s, x, alpha))
    time_gradient_mixed = float(time_seminorm(phi_x, s, (1.0 + alpha) / 2.0)[0])
    components = {
        "sup": sup, "sup_x": sup_x, "sup_xx": sup_xx, "sup_s": sup_s,
        "parabolic": float(time_half) + float(space),
        "parabolic_x": gradient_parabolic,
        "parabolic_s": float(parabolic_seminorm(phi_s, s, x, alpha)),
        "parabolic_xx": float(parabolic_seminorm(phi_xx, s, x, alpha)),
        "time_mixed": time_mixed,
        "time_gradient_mixed": time_gradient_mixed,
    }
    holder_alpha = sup + components["parabolic"]
    holder_one_alpha = sup + sup_x + gradient_parabolic + time_mixed
    holder_two_alpha = (sup + sup_x + sup_xx + sup_s + components["parabolic_s"]
                        + components["parabolic_xx"] + time_gradient_mixed)
    return HolderReport(
        sup_norm=sup, time_seminorm=float(time_half), space_seminorm=float(space),
        holder_alpha=holder_alpha, holder_one_alpha=holder_one_alpha, holder_two_alpha=holder_two_alpha,
        window=window, alpha=alpha, min_pair_distance=h, space_peak_distance=space_peak,
        time_peak_start=time_peak, components=components,
    )


@dataclass
class XNormValue:
    """‖θ‖_X[S,T]; ``components`` are the summands at the maximizing (t, ξ) slice."""

    value: float
    components: Dict[str, float]
    S: float
    alpha: float
    argmax: Tuple[float, float] = (0.0, 0.0)


def xnorm(theta: ThetaField, S: Optional[float] = None) -> XNormValue:
    """
    Discrete X-norm: sup over (t, ξ) of
    |θ|^0 + |θ_x|^0 + ⟨θ_x⟩^(α) + ⟨θ⟩_s^((1+α)/2) + |θ_t|^0 + |θ_ξ|^0 + |θ_xt|^0 + |θ_xξ|^0
    over s in [t ∨ S, T].

    Raises:
        WindowOutsideGrid: S is not inside [0, T).
    """
    grid = theta.grid
    knots = grid.knots
    S = float(knots[0]) if S is None else float(S)
    keep, _ = _window_slice(knots, (S, grid.horizon))
    alpha = grid.alpha
    s = knots[keep]
    t_values = knots if theta.depends_on_t else np.zeros(1)
    xi_values = grid.x if theta.depends_on_xi else np.zeros(1)

    best_value, best_components, best_at = -np.inf, {}, (0.0, 0.0)
    for component in range(theta.m):
        # (t, ξ, s, x) ordering so the seminorm helpers reduce over the trailing pair
        values = np.moveaxis(theta.values[..., component], 2, 1)[:, :, keep, :]
        lower = np.maximum(t_values, S)
        values = np.where(s[None, None, :, None] >= lower[:, None, None, None] - 1e-12, values, np.nan)
        grad_x = _derivative(values, grid.x, axis=3)
        zero = np.zeros_like(values)
        grad_t = _derivative(values, t_values, axis=0) if theta.depends_on_t else zero
        grad_xi = _derivative(values, xi_values, axis=1) if theta.depends_on_xi else zero
        grad_xt = _derivative(grad_x, t_values, axis=0) if theta.depends_on_t else zero
        grad_xxi = _derivative(grad_x, xi_values, axis=1) if theta.depends_on_xi else zero

        parts = {
            "sup": sup_norm(values),
            "sup_x": sup_norm(grad_x),
            "parabolic_x": parabolic_seminorm(grad_x, s, grid.x, alpha),
            "time_mixed": time_seminorm(values, s, (1.0 + alpha) / 2.0)[0],
            "sup_t": sup_norm(grad_t),
            "sup_xi": sup_norm(grad_xi),
            "sup_xt": sup_norm(grad_xt),
            "sup_xxi": sup_norm(grad_xxi),
        }
        total = sum(parts.values())
        index = np.unravel_index(int(np.argmax(total)), total.shape)
        if float(total[index]) > best_value:
            best_value = float(total[index])
            best_components = {name: float(part[index]) for name, part in parts.items()}
            best_at = (float(t_values[index[0]]), float(xi_values[index[1]]))
    return XNormValue(value=best_value, components=best_components, S=S, alpha=alpha, argmax=best_at)


@dataclass
class ScalingProbe:
    """Norms of the window solutions and their fitted slopes against the window length."""

    rows: List[Dict[str, float]]
    slopes: Dict[str, float]
    exponents: Dict[str, float]
    passed: Dict[str, bool]  # checked metrics only


def window_scaling_probe(a: float, b: float, f: Callable, windows: Optional[Sequence[float]] = None,
                         horizon: float = 1.0, steps_per_window: int = 64, space_points: int = 201,
                         radius: float = 8.0, alpha: Optional[float] = None,
                         checked: Optional[Sequence[str]] = None) -> ScalingProbe:
    """
    Solve ṽ_s + a ṽ_xx + b ṽ_x + f = 0, ṽ(T) = 0 on [T - δ, T] for each window δ and
    fit log-log slopes of |ṽ|^(0), |ṽ_x|^(0) and |ṽ|^(1+α) against δ.

    Norms are taken over |x| <= R/2 so the extrapolated boundary rows stay out of the
    measurement. Every metric in ``checked`` (default: all three) passes only if its slope
    meets or exceeds the bound exponent. Metrics that vanish on every window are degenerate
    and pass.

    Raises:
        ConfigurationError: ``checked`` names an unknown metric.
    """
    alpha = HOLDER["alpha"] if alpha is None else float(alpha)
    windows = [horizon / 2.0, horizon / 4.0, horizon / 8.0] if windows is None else list(windows)
    x = np.linspace(-radius, radius, space_points)
    inner = np.abs(x) <= radius / 2.0 + 1e-12
    rows = []
    for delta in windows:
        knots = np.linspace(horizon - delta, horizon, steps_per_window + 1)
        v = solve_linear_backward(a, b, f, knots, x)
        report = holder_report(v[:, inner], knots, x[inner], alpha=alpha)
        rows.append({"window": delta, "sup": report.sup_norm, "sup_x": report.components["sup_x"],
                     "holder_one_alpha": report.holder_one_alpha})
        logger.debug(f"window {delta:.4g}: |v|0={report.sup_norm:.4g}, |v|1+a={report.holder_one_alpha:.4g}")

    exponents = {"sup": 1.0, "sup_x": (1.0 + alpha) / 2.0, "holder_one_alpha": alpha / 2.0}
    checked = list(exponents) if checked is None else list(checked)
    unknown = set(checked) - set(exponents)
    if unknown:
        raise ConfigurationError(f"Unknown scaling metrics {sorted(unknown)} (choose from {list(exponents)})")
    slopes, passed = {}, {}
    for name, exponent in exponents.items():
        metric = np.array([row[name] for row in rows])
        if np.all(metric < 1e-12):
            slopes[name] = float("nan")
            if name in checked:
                passed[name] = True
            continue
        slopes[name] = loglog_slope(windows, metric)
        if name in checked:
            passed[name] = bool(slopes[name] >= exponent - HOLDER["slope_roundoff"])
    logger.info(f"Window scaling slopes {slopes} (bound exponents {exponents})")
    return ScalingProbe(rows=rows, slopes=slopes, exponents=exponents, passed=passed)
