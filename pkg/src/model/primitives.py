"""Built-in coefficient primitives used by composed (config-defined) problems.

A descriptor reads ``KIND:p1,p2,...[@ARG]`` and several descriptors may be summed
with ``;``. Kinds:

    constant     p0
    affine       p0 + p1*arg
    sin-bounded  p0 + p1*sin(p2*arg)

Parameters are written back with ``repr`` so descriptor -> primitive -> descriptor
is exact.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from src.utils.errors import ConfigInvalid

PRIMITIVE_ARITY = {"constant": 1, "affine": 2, "sin-bounded": 3}

# arguments each coefficient slot may read, first entry is the default
SLOT_ARGUMENTS = {
    "DRIFT": ("x", "s"),
    "SIGMA": ("x", "s"),
    "PSI": ("x", "xi", "t"),
    "GENERATOR": ("y", "z", "zeta", "x", "xi", "t", "s"),
}


@dataclass(frozen=True)
class Primitive:
    kind: str
    params: Tuple[float, ...]
    arg: str

    def __call__(self, argument: np.ndarray) -> np.ndarray:
        if self.kind == "constant":
            return np.full(np.shape(argument), self.params[0])
        if self.kind == "affine":
            return self.params[0] + self.params[1] * argument
        return self.params[0] + self.params[1] * np.sin(self.params[2] * argument)

    @property
    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        if self.kind == "affine":
            return abs(self.params[1])
        return abs(self.params[1] * self.params[2])

    @property
    def bound(self) -> float:
        """Sup norm of the primitive (inf for affine with nonzero slope)."""
        if self.kind == "constant":
            return abs(self.params[0])
        if self.kind == "affine":
            return abs(self.params[0]) if self.params[1] == 0.0 else float("inf")
        return abs(self.params[0]) + abs(self.params[1])

    def render(self, default_arg: str) -> str:
        text = f"{self.kind}:" + ",".join(repr(float(p)) for p in self.params)
        if self.arg != default_arg:
            text += f"@{self.arg}"
        return text


def parse_descriptor(text: str, slot: str) -> List[Primitive]:
    """
    Parse a (possibly summed) primitive descriptor for a coefficient slot.

    Args:
        text (str): Descriptor such as ``sin-bounded:0,1,1@y;constant:0.5``.
        slot (str): Config key the descriptor belongs to (DRIFT, SIGMA, PSI, GENERATOR).

    Returns:
        List[Primitive]: The summed terms.

    Raises:
        ConfigInvalid: Unknown kind, wrong arity, bad number or argument.
    """
    allowed = SLOT_ARGUMENTS[slot]
    terms = []
    for raw in text.split(";"):
        raw = raw.strip()
        if not raw:
            continue
        body, _, arg = raw.partition("@")
        arg = arg.strip() or allowed[0]
        kind, sep, params_text = body.partition(":")
        kind = kind.strip()
        if not sep or kind not in PRIMITIVE_ARITY:
            raise ConfigInvalid(f"{slot}: unknown primitive '{raw}' (kinds: {', '.join(PRIMITIVE_ARITY)})", key=slot)
        try:
            params = tuple(float(p) for p in params_text.split(","))
        except ValueError:
            raise ConfigInvalid(f"{slot}: parameters of '{raw}' are not numbers", key=slot)
        if len(params) != PRIMITIVE_ARITY[kind]:
            raise ConfigInvalid(
                f"{slot}: '{kind}' takes {PRIMITIVE_ARITY[kind]} parameters, got {len(params)}", key=slot)
        if arg not in allowed:
            raise ConfigInvalid(f"{slot}: argument '{arg}' not one of {allowed}", key=slot)
        terms.append(Primitive(kind=kind, params=params, arg=arg))
    if not terms:
        raise ConfigInvalid(f"{slot}: empty descriptor", key=slot)
    return terms


def render_descriptor(terms: List[Primitive], slot: str) -> str:
    return ";".join(term.render(SLOT_ARGUMENTS[slot][0]) for term in terms)


def _scalar_argument(name: str, arguments: Dict[str, np.ndarray]) -> np.ndarray:
    value = np.asarray(arguments[name], dtype=float)
    if name in ("x", "xi", "y"):
        return value[..., 0]
    if name in ("z", "zeta"):
        return value[..., 0, 0]
    return value


def evaluate_terms(terms: List[Primitive], arguments: Dict[str, np.ndarray]) -> np.ndarray:
    """Sum the terms on scalar views of the named arguments (n = m = d = 1)."""
    total = 0.0
    for term in terms:
        total = total + term(_scalar_argument(term.arg, arguments))
    return np.asarray(total, dtype=float)


def drift_function(terms: List[Primitive]) -> Callable:
    def b(s, x):
        return evaluate_terms(terms, {"s": s, "x": x})[..., None]
    return b


def sigma_function(terms: List[Primitive]) -> Callable:
    def sigma(s, x):
        return evaluate_terms(terms, {"s": s, "x": x})[..., None, None]
    return sigma


def psi_function(terms: List[Primitive]) -> Callable:
    def psi(t, xi, x):
        return evaluate_terms(terms, {"t": t, "xi": xi, "x": x})[..., None]
    return psi


def generator_function(terms: List[Primitive], with_zeta: bool) -> Callable:
    if with_zeta:
        def g(t, s, xi, x, y, z, zeta):
            return evaluate_terms(terms, {"t": t, "s": s, "xi": xi, "x": x, "y": y, "z": z, "zeta": zeta})[..., None]
    else:
        if any(term.arg == "zeta" for term in terms):
            raise ConfigInvalid("GENERATOR: 'zeta' argument needs TYPE=II", key="GENERATOR")

        def g(t, s, xi, x, y, z):
            return evaluate_terms(terms, {"t": t, "s": s, "xi": xi, "x": x, "y": y, "z": z})[..., None]
    return g
