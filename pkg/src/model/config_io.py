"""Key-value problem configs: catalog selection or composed primitives."""

import logging
from pathlib import Path
from typing import Dict, Union

from dotenv import dotenv_values

from src.model.catalog import catalog_names, lookup
from src.model.primitives import (
    drift_function,
    generator_function,
    parse_descriptor,
    psi_function,
    render_descriptor,
    sigma_function,
)
from src.model.problem import Problem, SdeModel, TypeIProblem, TypeIIProblem
from src.utils.errors import ConfigInvalid

logger = logging.getLogger(__name__)

COMPOSED = "composed"
COMPOSED_KEYS = ["TYPE", "DRIFT", "SIGMA", "PSI", "GENERATOR", "LIPSCHITZ", "ELLIPTICITY", "BOUND_M"]


def read_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Parse a KEY=VALUE file; ``#`` starts a comment."""
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid(f"Config file not found: {path}", key=None)
    items = dotenv_values(path)
    return {key: value for key, value in items.items() if value is not None}


def _require(items: Dict[str, str], key: str) -> str:
    value = items.get(key)
    if value is None or str(value).strip() == "":
        raise ConfigInvalid(f"Missing required config key '{key}'", key=key)
    return str(value).strip()


def _float(items: Dict[str, str], key: str) -> float:
    text = _require(items, key)
    try:
        return float(text)
    except ValueError:
        raise ConfigInvalid(f"Config key '{key}' must be a number, got '{text}'", key=key)


def problem_from_config(items: Dict[str, str], horizon: float = 1.0) -> Problem:
    """
    Build a problem from config items.

    Args:
        items (Dict[str, str]): Parsed key-value pairs. ``PROBLEM`` names a catalog
            entry or ``composed``; composed problems need every key of COMPOSED_KEYS.
        horizon (float): Time horizon T.

    Returns:
        TypeIProblem | TypeIIProblem: The problem, carrying its canonical items in ``config_items``.

    Raises:
        ConfigInvalid: Missing or malformed keys, naming the key.
    """
    name = _require(items, "PROBLEM")
    if name != COMPOSED:
        if name not in catalog_names():
            raise ConfigInvalid(f"Unknown catalog problem '{name}'", key="PROBLEM")
        epsilon = _float(items, "EPSILON") if "EPSILON" in items else None
        return lookup(name, horizon=horizon, epsilon=epsilon).problem

    for key in COMPOSED_KEYS:
        _require(items, key)
    kind = _require(items, "TYPE").upper()
    if kind not in ("I", "II"):
        raise ConfigInvalid(f"TYPE must be I or II, got '{kind}'", key="TYPE")

    drift = parse_descriptor(items["DRIFT"], "DRIFT")
    sigma = parse_descriptor(items["SIGMA"], "SIGMA")
    psi = parse_descriptor(items["PSI"], "PSI")
    generator = parse_descriptor(items["GENERATOR"], "GENERATOR")
    lipschitz = _float(items, "LIPSCHITZ")
    ellipticity = _float(items, "ELLIPTICITY")
    bound = _float(items, "BOUND_M")
    if ellipticity <= 0.0:
        raise ConfigInvalid("ELLIPTICITY must be positive", key="ELLIPTICITY")

    canonical = {
        "PROBLEM": COMPOSED,
        "TYPE": kind,
        "DRIFT": render_descriptor(drift, "DRIFT"),
        "SIGMA": render_descriptor(sigma, "SIGMA"),
        "PSI": render_descriptor(psi, "PSI"),
        "GENERATOR": render_descriptor(generator, "GENERATOR"),
        "LIPSCHITZ": repr(lipschitz),
        "ELLIPTICITY": repr(ellipticity),
        "BOUND_M": repr(bound),
    }

    constant_model = all(term.kind == "constant" for term in drift + sigma)
    if constant_model:
        model = SdeModel.constant(
            drift=sum(term.params[0] for term in drift),
            sigma=sum(term.params[0] for term in sigma),
            lipschitz_L=lipschitz, ellipticity_sigma_bar=ellipticity, bound_M=bound,
            config_items=canonical,
        )
    else:
        model = SdeModel(
            n=1, d=1, b=drift_function(drift), sigma=sigma_function(sigma),
            lipschitz_L=lipschitz, ellipticity_sigma_bar=ellipticity, bound_M=bound, config_items=canonical,
        )

    uses = {term.arg for term in psi + generator}
    problem_cls = TypeIIProblem if kind == "II" else TypeIProblem
    problem = problem_cls(
        model=model, m=1,
        psi=psi_function(psi),
        g=generator_function(generator, with_zeta=kind == "II"),
        lipschitz_L=lipschitz,
        depends_on_t="t" in uses,
        depends_on_xi="xi" in uses,
        name=COMPOSED,
        config_items=canonical,
    )
    logger.info(f"Composed TYPE-{kind} problem from config (t-dependent={problem.depends_on_t}, "
                f"xi-dependent={problem.depends_on_xi})")
    return problem


def problem_to_config(problem: Problem) -> Dict[str, str]:
    """Canonical key-value items of a problem built by the catalog or from a config."""
    if not problem.config_items:
        raise ConfigInvalid(f"Problem '{problem.name}' was not built from a config or the catalog", key="PROBLEM")
    return dict(problem.config_items)


def render_config(items: Dict[str, str]) -> str:
    """KEY=VALUE text with keys in a stable order."""
    order = ["PROBLEM"] + COMPOSED_KEYS
    keys = [k for k in order if k in items] + sorted(k for k in items if k not in order)
    return "\n".join(f"{key}={items[key]}" for key in keys) + "\n"
