"""Problem instances: forward SDE coefficients, free terms and generators.

All coefficient callables broadcast over leading axes. Time arguments are scalars
or arrays of the leading shape; state arguments carry trailing axes:
x, xi -> (..., n), y -> (..., m), z and zeta -> (..., m, d). Drift returns
(..., n), diffusion (..., n, d), free term and generator (..., m).
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.stats import qmc

from src.config.settings import VALIDATION
from src.utils.errors import ConfigurationError, EllipticityViolated, NonFiniteCoefficient

logger = logging.getLogger(__name__)


def _lead(*shapes):
    return np.broadcast_shapes(*shapes)


@dataclass(frozen=True, eq=False)
class SdeModel:
    """Coefficients of dX = b(s,X)ds + σ(s,X)dW with their regularity constants."""

    n: int
    d: int
    b: Callable
    sigma: Callable
    lipschitz_L: float
    ellipticity_sigma_bar: float
    bound_M: float
    constant_drift: Optional[np.ndarray] = None
    constant_sigma: Optional[np.ndarray] = None
    config_items: Optional[Dict[str, str]] = field(default=None, repr=False)

    @classmethod
    def constant(cls, drift=0.0, sigma=1.0, n=1, d=1, lipschitz_L=1.0,
                 ellipticity_sigma_bar=None, bound_M=None, config_items=None):
        """
        Build a constant-coefficient model.

        Args:
            drift (float | array): Drift vector (n,) or scalar broadcast to it.
            sigma (float | array): Diffusion matrix (n, d) or scalar times the
                rectangular identity.
            n (int): State dimension.
            d (int): Brownian dimension.
            lipschitz_L (float): Declared Lipschitz constant.
            ellipticity_sigma_bar (float, optional): Declared σ̄; defaults to the
                smallest singular value of ``sigma`` (0 is replaced by 1e-12).
            bound_M (float, optional): Declared bound; defaults to max(|b|, |σ|).

        Returns:
            SdeModel: The model.
        """
        b_vec = np.broadcast_to(np.asarray(drift, dtype=float), (n,)).copy()
        sig = np.asarray(sigma, dtype=float)
        if sig.ndim == 0:
            sig = float(sig) * np.eye(n, d)
        sig = np.broadcast_to(sig, (n, d)).copy()
        if ellipticity_sigma_bar is None:
            sv = np.linalg.svd(sig, compute_uv=False)
            ellipticity_sigma_bar = max(float(sv.min()), 1e-12)
        if bound_M is None:
            bound_M = max(float(np.linalg.norm(b_vec)), float(np.linalg.norm(sig)), 1e-12)

        def b(s, x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(b_vec, _lead(np.shape(s), x.shape[:-1]) + (n,))

        def sigma_fn(s, x):
            x = np.asarray(x, dtype=float)
            return np.broadcast_to(sig, _lead(np.shape(s), x.shape[:-1]) + (n, d))

        return cls(n=n, d=d, b=b, sigma=sigma_fn, lipschitz_L=lipschitz_L,
                   ellipticity_sigma_bar=ellipticity_sigma_bar, bound_M=bound_M,
                   constant_drift=b_vec, constant_sigma=sig, config_items=config_items)

    @property
    def is_constant(self) -> bool:
        return self.constant_drift is not None and self.constant_sigma is not None

    def drift(self, s, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.b(s, x), dtype=float)
        return np.broadcast_to(out, _lead(np.shape(s), x.shape[:-1]) + (self.n,))

    def diffusion(self, s, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.sigma(s, x), dtype=float)
        return np.broadcast_to(out, _lead(np.shape(s), x.shape[:-1]) + (self.n, self.d))

    def diffusion_coefficient(self, s, x) -> np.ndarray:
        """a(s,x) = σσᵀ/2 for n = 1, shape of the leading axes."""
        self.require_scalar_state()
        sig = self.diffusion(s, x)
        return 0.5 * np.sum(sig[..., 0, :] ** 2, axis=-1)

    def constant_ab(self) -> Tuple[float, float]:
        """Return (a, b) of a constant-coefficient scalar model."""
        self.require_scalar_state()
        if not self.is_constant:
            raise ConfigurationError("This backend needs constant drift and diffusion coefficients")
        return 0.5 * float(np.sum(self.constant_sigma[0] ** 2)), float(self.constant_drift[0])

    def require_scalar_state(self):
        if self.n != 1:
            raise ConfigurationError(f"Grid solvers need state dimension n=1, got n={self.n}")


def symmetric_extension(g: Callable) -> Callable:
    """Extend a generator given on t <= s to [0,T]^2 by g(t,s,...) = g(s,t,...)."""

    def extended(t, s, *args):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        return g(np.minimum(t, s), np.maximum(t, s), *args)

    extended.__wrapped__ = g
    return extended


@dataclass(frozen=True, eq=False)
class TypeIProblem:
    """Y(t) = ψ(t,X(t),X(T)) + ∫ g(t,s,X(t),X(s),Y(s),Z(t,s))ds − ∫ Z(t,s)dW(s)."""

    model: SdeModel
    m: int
    psi: Callable
    g: Callable
    lipschitz_L: float
    depends_on_t: bool = True
    depends_on_xi: bool = True
    name: str = "custom"
    config_items: Optional[Dict[str, str]] = field(default=None, repr=False)

    kind = "I"

    def __post_init__(self):
        object.__setattr__(self, "_extended", symmetric_extension(self.g))

    def terminal(self, t, xi, x) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.psi(t, xi, x), dtype=float)
        return np.broadcast_to(out, _lead(np.shape(t), xi.shape[:-1], x.shape[:-1]) + (self.m,))

    def generator(self, t, s, xi, x, y, z) -> np.ndarray:
        xi, x, y, z = (np.asarray(a, dtype=float) for a in (xi, x, y, z))
        out = np.asarray(self._extended(t, s, xi, x, y, z), dtype=float)
        shape = _lead(np.shape(t), np.shape(s), xi.shape[:-1], x.shape[:-1], y.shape[:-1], z.shape[:-2])
        return np.broadcast_to(out, shape + (self.m,))

    def with_generator(self, g: Callable, **changes):
        return replace(self, g=g, **changes)


@dataclass(frozen=True, eq=False)
class TypeIIProblem(TypeIProblem):
    """Type-II variant: the generator also receives ζ = Z(s,t)."""

    kind = "II"

    def generator(self, t, s, xi, x, y, z, zeta=None) -> np.ndarray:
        xi, x, y, z = (np.asarray(a, dtype=float) for a in (xi, x, y, z))
        if zeta is None:
            zeta = np.zeros_like(z)
        zeta = np.asarray(zeta, dtype=float)
        out = np.asarray(self._extended(t, s, xi, x, y, z, zeta), dtype=float)
        shape = _lead(np.shape(t), np.shape(s), xi.shape[:-1], x.shape[:-1], y.shape[:-1],
                      z.shape[:-2], zeta.shape[:-2])
        return np.broadcast_to(out, shape + (self.m,))


Problem = Union[TypeIProblem, TypeIIProblem]


@dataclass
class ValidationReport:
    """Outcome of the sampling-based hypothesis check."""

    passed: bool
    lipschitz: Dict[str, float]
    max_lipschitz: float
    min_ellipticity: float
    max_magnitude: Dict[str, float]
    symmetric_extension: bool
    sample_count: int
    messages: List[str] = field(default_factory=list)


def _group_quotients(fn: Callable, args: List[np.ndarray], groups: Dict[str, Tuple[int, Tuple[int, ...]]],
                     step: float, label: str) -> Dict[str, float]:
    """Max over samples of the finite-difference gradient norm of ``fn`` per argument group."""
    base = np.asarray(fn(*args), dtype=float)
    _check_finite(base, label)
    quotients = {}
    for group, (position, trailing) in groups.items():
        total = np.zeros(base.shape[:1])
        for index in np.ndindex(*trailing) if trailing else [()]:
            shifted = [a.copy() for a in args]
            shifted[position][(slice(None),) + index] += step
            value = np.asarray(fn(*shifted), dtype=float)
            _check_finite(value, label)
            diff = (value - base).reshape(base.shape[0], -1)
            total += np.sum(diff ** 2, axis=1) / step ** 2
        quotients[f"{label}.{group}"] = float(np.sqrt(total).max())
    return quotients


def _check_finite(values: np.ndarray, label: str):
    if not np.all(np.isfinite(values)):
        raise NonFiniteCoefficient(f"Coefficient '{label}' returned NaN or infinite values")


def validate_problem(p: Problem, sample_count: Optional[int] = None, seed: int = 0,
                     horizon: float = 1.0) -> ValidationReport:
    """
    Check the Lipschitz, ellipticity and boundedness hypotheses on a deterministic low-discrepancy sample.

    Args:
        p (TypeIProblem | TypeIIProblem): The problem.
        sample_count (int, optional): Number of sample points (default from settings).
        seed (int): Seed of the scrambled Halton sequence.
        horizon (float): Time horizon T of the sampled box [0,T].

    Returns:
        ValidationReport: Measured quotients, ellipticity and magnitudes.

    Raises:
        NonFiniteCoefficient: A coefficient returned NaN/inf.
        EllipticityViolated: min |σᵀv|/|v| falls below the declared σ̄.
    """
    count = int(sample_count or VALIDATION["sample_count"])
    model = p.model
    n, d, m = model.n, model.d, p.m
    with_zeta = p.kind == "II"
    width = 2 + 2 * n + m + m * d * (2 if with_zeta else 1)
    unit = qmc.Halton(d=width, scramble=True, seed=seed).random(count)

    box_x, box_v = VALIDATION["state_box"], VALIDATION["value_box"]
    cursor = 0

    def take(k, low, high):
        nonlocal cursor
        block = low + (high - low) * unit[:, cursor:cursor + k]
        cursor += k
        return block

    t = take(1, 0.0, horizon)[:, 0]
    s = take(1, 0.0, horizon)[:, 0]
    xi = take(n, -box_x, box_x)
    x = take(n, -box_x, box_x)
    y = take(m, -box_v, box_v)
    z = take(m * d, -box_v, box_v).reshape(count, m, d)
    zeta = take(m * d, -box_v, box_v).reshape(count, m, d) if with_zeta else None

    step = VALIDATION["fd_step"]
    slack = 1.0 + VALIDATION["eps_check"]
    messages = []

    # forward coefficients: Lipschitz in x, bounded, uniformly elliptic
    quotients = {}
    quotients.update(_group_quotients(lambda xx: model.drift(s, xx), [x], {"x": (0, (n,))}, step, "b"))
    quotients.update(_group_quotients(lambda xx: model.diffusion(s, xx), [x], {"x": (0, (n,))}, step, "sigma"))
    drift_values = model.drift(s, x)
    sigma_values = model.diffusion(s, x)
    _check_finite(sigma_values, "sigma")
    magnitudes = {
        "b": float(np.linalg.norm(drift_values, axis=-1).max()),
        "sigma": float(np.linalg.norm(sigma_values.reshape(count, -1), axis=-1).max()),
    }
    singular = np.linalg.svd(sigma_values, compute_uv=False)
    min_ellipticity = float(singular.min())
    if min_ellipticity < model.ellipticity_sigma_bar * (1.0 - 1e-12):
        raise EllipticityViolated(
            f"min |σᵀv|/|v| = {min_ellipticity:.3e} is below the declared σ̄ = {model.ellipticity_sigma_bar:.3e}")

    psi_groups = {"t": (0, ()), "xi": (1, (n,)), "x": (2, (n,))}
    quotients.update(_group_quotients(lambda tt, a, b_: p.terminal(tt, a, b_), [t.copy(), xi, x],
                                      psi_groups, step, "psi"))
    g_args = [t.copy(), s.copy(), xi, x, y, z]
    g_groups = {"t": (0, ()), "s": (1, ()), "xi": (2, (n,)), "x": (3, (n,)), "y": (4, (m,)), "z": (5, (m, d))}
    if with_zeta:
        g_args.append(zeta)
        g_groups["zeta"] = (6, (m, d))
    # restrict Lipschitz sampling in (t,s) to t <= s so the kink of the extension is not crossed
    lo, hi = np.minimum(t, s), np.maximum(t, s)
    g_args[0], g_args[1] = lo, hi + step
    quotients.update(_group_quotients(p.generator, g_args, g_groups, step, "g"))
    magnitudes["psi"] = float(np.abs(p.terminal(t, xi, x)).max())
    magnitudes["g"] = float(np.abs(p.generator(*g_args)).max())

    # below the diagonal the generator must read the raw g at the mirrored (s, t)
    below = p.generator(hi, lo, *g_args[2:])
    raw = np.broadcast_to(np.asarray(p.g(lo, hi, *g_args[2:]), dtype=float), below.shape)
    symmetric = bool(np.array_equal(below, raw))
    if not symmetric:
        messages.append("generator below the diagonal does not mirror g(t, s) for t <= s")

    passed = symmetric
    for key, value in quotients.items():
        declared = model.lipschitz_L if key.split(".")[0] in ("b", "sigma") else p.lipschitz_L
        if value > declared * slack:
            passed = False
            messages.append(f"{key}: measured Lipschitz quotient {value:.4g} exceeds declared {declared:.4g}")
    for key in ("b", "sigma"):
        if magnitudes[key] > model.bound_M * slack:
            passed = False
            messages.append(f"|{key}| reaches {magnitudes[key]:.4g} above bound M = {model.bound_M:.4g}")

    report = ValidationReport(
        passed=passed,
        lipschitz=quotients,
        max_lipschitz=max(quotients.values()),
        min_ellipticity=min_ellipticity,
        max_magnitude=magnitudes,
        symmetric_extension=symmetric,
        sample_count=count,
        messages=messages,
    )
    logger.info(f"Validated problem '{p.name}': passed={passed}, max quotient={report.max_lipschitz:.4g}, "
                f"min ellipticity={min_ellipticity:.4g}")
    return report
