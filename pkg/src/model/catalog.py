"""Analytic test problems with known representation fields."""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional

import numpy as np

from src.model.problem import Problem, SdeModel, TypeIProblem, TypeIIProblem
from src.utils.errors import ConfigInvalid

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TestCatalogEntry:
    """
    A catalog problem with its closed forms.

    ``residual_rate`` is the expected log-log slope of the path residual under
    time-step refinement; None means the discrete residual vanishes identically.
    """

    __test__ = False

    name: str
    problem: Problem
    closed_form_theta: Optional[Callable] = None
    closed_form_gamma: Optional[Callable] = None
    provenance: str = ""
    residual_rate: Optional[float] = None
    description: str = ""


def _zero(*args):
    return 0.0


def _brownian(lipschitz: float = 1.0) -> SdeModel:
    return SdeModel.constant(drift=0.0, sigma=1.0, lipschitz_L=lipschitz, ellipticity_sigma_bar=1.0, bound_M=1.0)


def _heat_terminal_x(T: float) -> TestCatalogEntry:
    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: x,
        g=lambda t, s, xi, x, y, z: np.zeros_like(y),
        lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False,
        name="heat-terminal-x", config_items={"PROBLEM": "heat-terminal-x"},
    )
    return TestCatalogEntry(
        name=problem.name, problem=problem,
        closed_form_theta=lambda t, s, xi, x: np.broadcast_to(x, np.broadcast_shapes(np.shape(x), xi.shape)),
        provenance="martingale property of X",
        description="b=0, sigma=1, psi=x, g=0",
    )


def _constant_g(T: float, c: float = 1.0) -> TestCatalogEntry:
    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.zeros_like(x),
        g=lambda t, s, xi, x, y, z: np.full(np.shape(y), c),
        lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False,
        name="constant-g", config_items={"PROBLEM": "constant-g"},
    )

    def theta(t, s, xi, x):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(c * (T - s)[..., None], np.broadcast_shapes(s.shape + (1,), xi.shape, x.shape))

    return TestCatalogEntry(
        name=problem.name, problem=problem, closed_form_theta=theta,
        provenance="pure time integral", description=f"g={c!r}, psi=0",
    )


def _diagonal_exponential(T: float) -> TestCatalogEntry:
    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.ones_like(x),
        g=lambda t, s, xi, x, y, z: y,
        lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False,
        name="diagonal-exponential", config_items={"PROBLEM": "diagonal-exponential"},
    )

    def theta(t, s, xi, x):
        s = np.asarray(s, dtype=float)
        return np.broadcast_to(np.exp(T - s)[..., None], np.broadcast_shapes(s.shape + (1,), xi.shape, x.shape))

    return TestCatalogEntry(
        name=problem.name, problem=problem, closed_form_theta=theta,
        provenance="backward ODE u'=-u with diagonal self-consistency u(s)=1+int_s^T u",
        residual_rate=1.0, description="g=y, psi=1",
    )


def _t_linear_g(T: float) -> TestCatalogEntry:
    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.zeros_like(x),
        g=lambda t, s, xi, x, y, z: np.asarray(t, dtype=float)[..., None] + np.zeros_like(y),
        lipschitz_L=1.0, depends_on_t=True, depends_on_xi=False,
        name="t-linear-g", config_items={"PROBLEM": "t-linear-g"},
    )

    def theta(t, s, xi, x):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        value = (t * (T - s))[..., None]
        return np.broadcast_to(value, np.broadcast_shapes(value.shape, xi.shape, x.shape))

    return TestCatalogEntry(
        name=problem.name, problem=problem, closed_form_theta=theta,
        provenance="per-slice linear integration, t as parameter", description="g=t, psi=0",
    )


def _type2_unit_zeta(T: float) -> TestCatalogEntry:
    problem = TypeIIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: x,
        g=lambda t, s, xi, x, y, z, zeta: zeta[..., 0],
        lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False,
        name="type2-unit-zeta", config_items={"PROBLEM": "type2-unit-zeta"},
    )

    def theta(t, s, xi, x):
        s = np.asarray(s, dtype=float)
        return x + (T - s)[..., None] + 0.0 * xi

    def gamma(t, s, x):
        t = np.asarray(t, dtype=float)
        return x + (T - t)[..., None] + 0.0 * np.asarray(s, dtype=float)[..., None]

    return TestCatalogEntry(
        name=problem.name, problem=problem, closed_form_theta=theta, closed_form_gamma=gamma,
        provenance="ansatz closure of the coupled system, Gamma_x=1",
        description="g=zeta, psi=x, b=0, sigma=1",
    )


def _heat_terminal_sin(T: float) -> TestCatalogEntry:
    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.sin(x),
        g=lambda t, s, xi, x, y, z: np.zeros_like(y),
        lipschitz_L=1.0, depends_on_t=False, depends_on_xi=False,
        name="heat-terminal-sin", config_items={"PROBLEM": "heat-terminal-sin"},
    )

    def theta(t, s, xi, x):
        s = np.asarray(s, dtype=float)
        return np.exp(-0.5 * (T - s))[..., None] * np.sin(x) + 0.0 * xi

    return TestCatalogEntry(
        name=problem.name, problem=problem, closed_form_theta=theta,
        provenance="heat semigroup acting on sin", residual_rate=0.5,
        description="psi=sin x, g=0",
    )


def _bsde_reduction(T: float) -> TestCatalogEntry:
    def g(t, s, xi, x, y, z):
        s = np.asarray(s, dtype=float)
        return 0.5 * np.sin(y) + 0.5 * np.cos(z[..., 0]) + 0.25 * s[..., None]

    problem = TypeIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.sin(x),
        g=g,
        lipschitz_L=1.0, depends_on_t=True, depends_on_xi=True,
        name="bsde-reduction", config_items={"PROBLEM": "bsde-reduction"},
    )
    return TestCatalogEntry(
        name=problem.name, problem=problem,
        provenance="generator g(s,y,z) and free term h(x): classical BSDE", residual_rate=0.5,
        description="g=0.5 sin y + 0.5 cos z + 0.25 s, psi=sin x",
    )


def bsde_reduction_parts():
    """The (g(s,y,z), h(x)) pair of the bsde-reduction entry for standalone solves."""

    def g_hat(s, y, z):
        s = np.asarray(s, dtype=float)
        return 0.5 * np.sin(y) + 0.5 * np.cos(z[..., 0]) + 0.25 * s[..., None]

    return g_hat, np.sin


def _cascade_nonlinear(T: float) -> TestCatalogEntry:
    def psi(t, xi, x):
        t = np.asarray(t, dtype=float)
        return np.sin(x) + 0.5 * t[..., None]

    def g(t, s, xi, x, y, z):
        t = np.asarray(t, dtype=float)
        return 0.5 * t[..., None] * np.cos(y) + 0.5 * np.sin(z[..., 0])

    problem = TypeIProblem(
        model=_brownian(), m=1, psi=psi, g=g,
        lipschitz_L=1.0, depends_on_t=True, depends_on_xi=False,
        name="cascade-nonlinear", config_items={"PROBLEM": "cascade-nonlinear"},
    )
    return TestCatalogEntry(
        name=problem.name, problem=problem,
        provenance="t-dependent nonlinear generator for partition rates", residual_rate=0.5,
        description="psi=sin x + t/2, g=t cos(y)/2 + sin(z)/2",
    )


def type2_scaled_zeta(epsilon: float, T: float = 1.0) -> TestCatalogEntry:
    """Type-II problem g = epsilon*zeta, psi = sin x; epsilon = 0 is heat-terminal-sin."""
    epsilon = float(epsilon)
    problem = TypeIIProblem(
        model=_brownian(), m=1,
        psi=lambda t, xi, x: np.sin(x),
        g=lambda t, s, xi, x, y, z, zeta: epsilon * zeta[..., 0],
        lipschitz_L=max(abs(epsilon), 1e-12), depends_on_t=False, depends_on_xi=False,
        name="type2-scaled-zeta", config_items={"PROBLEM": "type2-scaled-zeta", "EPSILON": repr(epsilon)},
    )
    return TestCatalogEntry(
        name=problem.name, problem=problem,
        provenance="zeta-coupling strength sweep", residual_rate=0.5,
        description=f"g={epsilon!r}*zeta, psi=sin x",
    )


_BUILDERS: Dict[str, Callable[[float], TestCatalogEntry]] = {
    "heat-terminal-x": _heat_terminal_x,
    "constant-g": _constant_g,
    "diagonal-exponential": _diagonal_exponential,
    "t-linear-g": _t_linear_g,
    "type2-unit-zeta": _type2_unit_zeta,
    "heat-terminal-sin": _heat_terminal_sin,
    "bsde-reduction": _bsde_reduction,
    "cascade-nonlinear": _cascade_nonlinear,
    "type2-scaled-zeta": lambda T: type2_scaled_zeta(0.25, T),
}

# closed-form oracles checked by the acceptance suite
ORACLE_NAMES = ["heat-terminal-x", "constant-g", "diagonal-exponential", "t-linear-g", "type2-unit-zeta"]


def catalog(horizon: float = 1.0) -> List[TestCatalogEntry]:
    """Return every catalog entry for the horizon T."""
    return [build(horizon) for build in _BUILDERS.values()]


def lookup(name: str, horizon: float = 1.0, epsilon: Optional[float] = None) -> TestCatalogEntry:
    """
    Fetch one catalog entry by name.

    Args:
        name (str): Catalog name, e.g. ``diagonal-exponential``.
        horizon (float): Time horizon T.
        epsilon (float, optional): Coupling strength for ``type2-scaled-zeta``.

    Returns:
        TestCatalogEntry: The entry.

    Raises:
        ConfigInvalid: Unknown name.
    """
    if name not in _BUILDERS:
        raise ConfigInvalid(f"Unknown catalog problem '{name}' (known: {', '.join(_BUILDERS)})", key="PROBLEM")
    if name == "type2-scaled-zeta" and epsilon is not None:
        return type2_scaled_zeta(epsilon, horizon)
    logger.debug(f"Catalog lookup {name} (T={horizon})")
    return _BUILDERS[name](horizon)


def catalog_names() -> List[str]:
    return list(_BUILDERS)
