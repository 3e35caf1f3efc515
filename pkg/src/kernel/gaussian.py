"""Gaussian fundamental solution of v_s + a v_xx + b v_x = 0 (constant a, b; n = 1).

G(s,x;tau,eta) is the transition density from (s,x) to (tau,eta):
(4 pi a r)^(-1/2) exp(-(eta - x - b r)^2 / (4 a r)), r = tau - s > 0.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.special import erfc

from src.config.settings import KERNEL
from src.model.problem import SdeModel
from src.utils.errors import DegenerateInterval, GridMismatch, KernelParamsInvalid

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class KernelParams:
    """
    Constants of a constant-coefficient kernel.

    Args:
        a (float): Diffusion coefficient sigma^2/2.
        b (float): Drift.
        radius (float): Truncation radius R of the eta domain.
        spacing (float): Quadrature spacing h in eta.
        horizon (float): Time horizon T.
        lam (float, optional): Fitted decay constant of the kernel bounds.
    """

    a: float
    b: float
    radius: float
    spacing: float
    horizon: float = 1.0
    lam: Optional[float] = None

    def __post_init__(self):
        if not self.a > 0.0:
            raise KernelParamsInvalid(f"Diffusion coefficient a must be positive, got {self.a}")
        if self.spacing <= 0.0:
            raise KernelParamsInvalid("Quadrature spacing must be positive")
        if self.radius / np.sqrt(self.a * self.horizon) < KERNEL["tail_sigmas"]:
            raise KernelParamsInvalid(
                f"R/sqrt(aT) = {self.radius / np.sqrt(self.a * self.horizon):.3g} is below "
                f"{KERNEL['tail_sigmas']}; the truncated tail mass would exceed 1e-8")

    @classmethod
    def from_model(cls, model: SdeModel, horizon: float, radius: float, spacing: float) -> "KernelParams":
        a, b = model.constant_ab()
        if a < 0.5 * model.ellipticity_sigma_bar ** 2 * (1.0 - 1e-12):
            raise KernelParamsInvalid(f"a = {a} is below sigma_bar^2/2")
        return cls(a=a, b=b, radius=radius, spacing=spacing, horizon=horizon)

    def with_lambda(self, lam: float) -> "KernelParams":
        return replace(self, lam=lam)


def _lag(s, tau) -> np.ndarray:
    r = np.asarray(tau, dtype=float) - np.asarray(s, dtype=float)
    if np.any(r <= 0.0):
        raise DegenerateInterval("Kernel evaluated with s >= tau")
    return r


def gaussian_kernel(s, x, tau, eta, params: KernelParams) -> np.ndarray:
    """Transition density G(s,x;tau,eta); broadcasts over all arguments."""
    r = _lag(s, tau)
    shift = np.asarray(eta, dtype=float) - np.asarray(x, dtype=float) - params.b * r
    return np.exp(-shift ** 2 / (4.0 * params.a * r)) / np.sqrt(4.0 * np.pi * params.a * r)


def gaussian_kernel_dx(s, x, tau, eta, params: KernelParams) -> np.ndarray:
    """Derivative of G in its starting point x."""
    r = _lag(s, tau)
    shift = np.asarray(eta, dtype=float) - np.asarray(x, dtype=float) - params.b * r
    return gaussian_kernel(s, x, tau, eta, params) * shift / (2.0 * params.a * r)


def gaussian_kernel_dxx(s, x, tau, eta, params: KernelParams) -> np.ndarray:
    r = _lag(s, tau)
    shift = np.asarray(eta, dtype=float) - np.asarray(x, dtype=float) - params.b * r
    two_ar = 2.0 * params.a * r
    return gaussian_kernel(s, x, tau, eta, params) * (shift ** 2 / two_ar ** 2 - 1.0 / two_ar)


def gaussian_kernel_ds(s, x, tau, eta, params: KernelParams) -> np.ndarray:
    """G_s = -(a G_xx + b G_x) (backward equation in the starting point)."""
    return -(params.a * gaussian_kernel_dxx(s, x, tau, eta, params)
             + params.b * gaussian_kernel_dx(s, x, tau, eta, params))


def kernel_matrix(lag: float, params: KernelParams, x_grid: np.ndarray, derivative: Optional[str] = None) -> np.ndarray:
    """
    Grid transition operator for a time lag.

    Row l holds h*G(0,x_l;lag,x_l') over the grid. Value-kernel rows are renormalized to
    unit mass so constants are preserved next to the truncation boundary.

    Args:
        lag (float): Time lag tau - s > 0.
        params (KernelParams): Kernel constants.
        x_grid (np.ndarray): Uniform grid.
        derivative (str, optional): ``"x"`` for the derivative kernel.

    Returns:
        np.ndarray: (Nx, Nx) matrix; ``P @ f`` approximates the convolution.
    """
    x_grid = np.asarray(x_grid, dtype=float)
    h = float(x_grid[1] - x_grid[0])
    start, end = x_grid[:, None], x_grid[None, :]
    if derivative is None:
        matrix = gaussian_kernel(0.0, start, lag, end, params) * h
        return matrix / matrix.sum(axis=1, keepdims=True)
    if derivative == "x":
        return gaussian_kernel_dx(0.0, start, lag, end, params) * h
    raise ValueError(f"Unknown kernel derivative '{derivative}'")


def kernel_normalization(params: KernelParams, s: float, x: float, tau: float) -> float:
    """Trapezoid mass of eta -> G(s,x;tau,eta) over [x-R, x+R] with the params' spacing."""
    count = int(round(2.0 * params.radius / params.spacing)) + 1
    eta = np.linspace(x - params.radius, x + params.radius, count)
    return float(trapezoid(gaussian_kernel(s, x, tau, eta, params), eta))


@dataclass
class KernelQuadrature:
    value: np.ndarray
    error_estimate: float
    tail_mass: float


def _uniform_spacing(axis: np.ndarray, name: str) -> float:
    steps = np.diff(axis)
    if steps.size == 0 or np.any(steps <= 0.0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=0.0):
        raise GridMismatch(f"{name} grid must be uniform and increasing")
    return float(steps[0])


def _convolve(f_values, tau_grid, eta_grid, s, x, params, legendre, hermite, derivative):
    T = float(tau_grid[-1])
    span = T - s
    u_nodes, u_weights = np.polynomial.legendre.leggauss(legendre)
    u_max = np.sqrt(span)
    u = 0.5 * u_max * (u_nodes + 1.0)
    u_weights = 0.5 * u_max * u_weights
    tau = s + u ** 2
    r = u ** 2

    # linear interpolation in tau of the grid rows
    position = np.clip(np.searchsorted(tau_grid, tau) - 1, 0, tau_grid.size - 2)
    weight = (tau - tau_grid[position]) / (tau_grid[position + 1] - tau_grid[position])
    rows = (1.0 - weight)[:, None] * f_values[position] + weight[:, None] * f_values[position + 1]
    spline = CubicSpline(eta_grid, rows.T, axis=0)

    z, w = np.polynomial.hermite.hermgauss(hermite)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    centre = x[:, None, None] + params.b * r[None, :, None]
    eta = centre + 2.0 * np.sqrt(params.a * r)[None, :, None] * z[None, None, :]
    low, high = eta_grid[0], eta_grid[-1]
    # nodes with negligible weight may sit past the grid edge and are clamped
    significant = np.broadcast_to(w > 1e-12, eta.shape)
    if np.any(eta[significant] < low - 1e-12) or np.any(eta[significant] > high + 1e-12):
        raise GridMismatch("Quadrature nodes fall outside the eta grid; widen the grid or move x inward")
    eta = np.clip(eta, low, high)

    # spline(eta) evaluates every row at every node; keep row k at its own nodes
    values = np.empty(eta.shape)
    for k in range(u.size):
        values[:, k, :] = spline(eta[:, k, :])[..., k]

    if derivative is None:
        inner = values @ w / np.sqrt(np.pi)
        integrand = inner * (2.0 * u)[None, :]
    else:
        inner = (values * z[None, None, :]) @ w / np.sqrt(np.pi)
        integrand = inner * (2.0 / np.sqrt(params.a))
    return integrand @ u_weights


def kernel_apply(f_values: np.ndarray, tau_grid: np.ndarray, eta_grid: np.ndarray, s: float, x,
                 params: KernelParams, derivative: Optional[str] = None) -> KernelQuadrature:
    """
    Duhamel integral int_s^T int G(s,x;tau,eta) f(tau,eta) deta dtau of grid data.

    The substitution tau = s + u^2 turns the (tau-s)^(-1/2) singularity of the derivative
    kernel into a smooth integrand; u uses Gauss-Legendre and eta Gauss-Hermite nodes,
    with f interpolated linearly in tau and by cubic splines in eta.

    Args:
        f_values (np.ndarray): f on the grid, shape (N_tau, N_eta).
        tau_grid (np.ndarray): Increasing tau knots covering [s, T].
        eta_grid (np.ndarray): Uniform eta grid.
        s (float): Starting time.
        x (float | array): Starting point(s).
        params (KernelParams): Kernel constants.
        derivative (str, optional): ``"x"`` to integrate against G_x.

    Returns:
        KernelQuadrature: Values, node-halving error estimate and the truncated tail mass.

    Raises:
        GridMismatch: Non-uniform eta grid, tau grid not covering [s,T] or shape mismatch.
    """
    f_values = np.asarray(f_values, dtype=float)
    tau_grid = np.asarray(tau_grid, dtype=float)
    eta_grid = np.asarray(eta_grid, dtype=float)
    if f_values.shape != (tau_grid.size, eta_grid.size):
        raise GridMismatch(f"f has shape {f_values.shape}, grids give {(tau_grid.size, eta_grid.size)}")
    _uniform_spacing(eta_grid, "eta")
    if tau_grid.size < 2 or s < tau_grid[0] - 1e-12 or s >= tau_grid[-1]:
        raise GridMismatch(f"tau grid [{tau_grid[0]}, {tau_grid[-1]}] does not cover [s, T] for s={s}")

    legendre, hermite = KERNEL["legendre_nodes"], KERNEL["hermite_nodes"]
    fine = _convolve(f_values, tau_grid, eta_grid, s, x, params, legendre, hermite, derivative)
    coarse = _convolve(f_values, tau_grid, eta_grid, s, x, params, legendre // 2, hermite, derivative)

    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    spread = np.sqrt(2.0 * params.a * (tau_grid[-1] - s))
    distance = np.minimum(x_arr - eta_grid[0], eta_grid[-1] - x_arr).min()
    tail = float(erfc(max(distance, 0.0) / (np.sqrt(2.0) * spread)))
    error = float(np.max(np.abs(fine - coarse))) + tail * float(np.abs(f_values).max())
    value = fine if np.ndim(x) else fine[0]
    return KernelQuadrature(value=value, error_estimate=error, tail_mass=tail)


def chapman_kolmogorov_defect(params: KernelParams, triples: Sequence[Tuple[float, float, float]],
                              x: float = 0.0, etas: Sequence[float] = (-1.0, 0.0, 0.5, 1.5)) -> float:
    """
    Max over sampled (s, r, tau) and eta of |int G(s,x;r,u)G(r,u;tau,eta)du - G(s,x;tau,eta)|.

    The middle integral uses the trapezoid rule with a spacing fine enough for the
    narrowest Gaussian factor.
    """
    worst = 0.0
    for s, r, tau in triples:
        if not s < r < tau:
            raise DegenerateInterval(f"Chapman-Kolmogorov needs s < r < tau, got {(s, r, tau)}")
        narrow = np.sqrt(2.0 * params.a * min(r - s, tau - r))
        step = min(params.spacing, narrow / 8.0)
        count = int(np.ceil(2.0 * params.radius / step)) + 1
        u = np.linspace(x - params.radius, x + params.radius, count)
        first = gaussian_kernel(s, x, r, u, params)
        for eta in etas:
            composed = trapezoid(first * gaussian_kernel(r, u, tau, eta, params), u)
            worst = max(worst, abs(composed - float(gaussian_kernel(s, x, tau, eta, params))))
    return worst


def heat_residual(params: KernelParams, s: float, tau: float, x_grid: np.ndarray, eta: float,
                  ds: float) -> np.ndarray:
    """Central-difference residual of (d_s + a d_xx + b d_x)G in (s, x) at fixed (tau, eta)."""
    x_grid = np.asarray(x_grid, dtype=float)
    h = float(x_grid[1] - x_grid[0])
    inner = x_grid[1:-1]
    g_s = (gaussian_kernel(s + ds, inner, tau, eta, params) - gaussian_kernel(s - ds, inner, tau, eta, params)) / (2 * ds)
    values = gaussian_kernel(s, x_grid, tau, eta, params)
    g_x = (values[2:] - values[:-2]) / (2 * h)
    g_xx = (values[2:] - 2 * values[1:-1] + values[:-2]) / h ** 2
    return g_s + params.a * g_xx + params.b * g_x


@dataclass
class KernelBounds:
    """Fitted lambda and per-kernel constants K of |D^k G| <= K r^(-(1+k)/2) exp(-lambda |eta-x|^2 / r)."""

    lam: float
    K: Dict[str, float]
    rho_max: float
    stable: Dict[str, bool] = field(default_factory=dict)


_ORDERS = {"G": 0, "G_x": 1, "G_xx": 2}


def _bound_ratios(params: KernelParams, lam: float, rho_max: float, points: int) -> Dict[str, np.ndarray]:
    lags = np.geomspace(1e-3 * params.horizon, params.horizon, points)
    rho = np.linspace(0.0, rho_max, points)
    r = lags[:, None]
    distance = rho[None, :] * np.sqrt(r)
    weight = np.exp(lam * rho[None, :] ** 2)
    kernels = {
        "G": gaussian_kernel(0.0, 0.0, r, distance, params),
        "G_x": gaussian_kernel_dx(0.0, 0.0, r, distance, params),
        "G_xx": gaussian_kernel_dxx(0.0, 0.0, r, distance, params),
    }
    # both sides of x when the drift breaks the symmetry
    if params.b != 0.0:
        kernels = {
            "G": np.maximum(kernels["G"], gaussian_kernel(0.0, 0.0, r, -distance, params)),
            "G_x": np.maximum(np.abs(kernels["G_x"]), np.abs(gaussian_kernel_dx(0.0, 0.0, r, -distance, params))),
            "G_xx": np.maximum(np.abs(kernels["G_xx"]), np.abs(gaussian_kernel_dxx(0.0, 0.0, r, -distance, params))),
        }
    return {name: np.abs(values) * r ** ((1 + _ORDERS[name]) / 2.0) * weight for name, values in kernels.items()}


def fit_kernel_bounds(params: KernelParams, rho_max: float = 12.0, points: Optional[int] = None) -> KernelBounds:
    """
    Fit the largest lambda whose constants K stay put when the rho = |eta-x|/sqrt(r) sweep
    is doubled, and report K for that lambda.
    """
    points = int(points or KERNEL["bound_sweep_points"])
    candidates = np.linspace(1.0 / (4.0 * params.a), 0.0, points)
    for lam in candidates:
        base = _bound_ratios(params, lam, rho_max, points)
        extended = _bound_ratios(params, lam, 2.0 * rho_max, 2 * points - 1)
        stable = {name: bool(extended[name].max() <= base[name].max() * (1.0 + 1e-3)) for name in base}
        if all(stable.values()):
            K = {name: float(values.max()) for name, values in base.items()}
            logger.info(f"[kernel] fitted lambda={lam:.4g} with K={K}")
            return KernelBounds(lam=float(lam), K=K, rho_max=rho_max, stable=stable)
    raise KernelParamsInvalid("No decay constant lambda gives bounded kernel constants on the sweep")


def verify_kernel_bounds(params: KernelParams, bounds: KernelBounds, rho_max: Optional[float] = None,
                         points: Optional[int] = None) -> Dict[str, float]:
    """Max of |D^k G| / bound over a (lag, rho) sweep; every entry <= 1 means the bounds hold."""
    rho_max = bounds.rho_max if rho_max is None else rho_max
    points = int(points or KERNEL["bound_sweep_points"])
    ratios = _bound_ratios(params, bounds.lam, rho_max, points)
    return {name: float(values.max() / bounds.K[name]) for name, values in ratios.items()}
