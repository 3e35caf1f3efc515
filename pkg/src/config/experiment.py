"""Experiment configs: one KEY=VALUE file per batch run, validated with pydantic."""

import logging
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from src.config.settings import OUTPUT, PICARD, SIMULATION, SOLVER, TYPE2
from src.model.config_io import COMPOSED_KEYS, problem_from_config, read_config_file
from src.model.problem import Problem
from src.utils.errors import ConfigInvalid
from src.utils.io import config_hash

logger = logging.getLogger(__name__)

PROBLEM_KEYS = ["PROBLEM", "EPSILON"] + COMPOSED_KEYS

# config key -> (section, field)
_LAYOUT = {
    "HORIZON": ("grid", "horizon"),
    "TIME_STEPS": ("grid", "time_steps"),
    "SPACE_POINTS": ("grid", "space_points"),
    "RADIUS": ("grid", "radius"),
    "N_PATHS": ("ensemble", "n_paths"),
    "SEED": ("ensemble", "seed"),
    "PICARD_TOL": ("tolerances", "picard"),
    "TYPE2_TOL": ("tolerances", "type2"),
}


class GridSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon: float = SOLVER["horizon"]
    time_steps: int = SOLVER["time_steps"]
    space_points: int = SOLVER["space_points"]
    radius: float = SOLVER["radius"]

    @field_validator("horizon")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0.0:
            raise ValueError("horizon must be non-negative")
        return value

    @field_validator("time_steps")
    @classmethod
    def _positive_steps(cls, value: int) -> int:
        if value < 1:
            raise ValueError("at least one time step is needed")
        return value

    @field_validator("space_points")
    @classmethod
    def _enough_points(cls, value: int) -> int:
        if value < 5:
            raise ValueError("the spatial grid needs at least five points")
        return value

    @field_validator("radius")
    @classmethod
    def _positive_radius(cls, value: float) -> float:
        if value <= 0.0:
            raise ValueError("radius must be positive")
        return value


class EnsembleSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_paths: int = Field(default=SIMULATION["n_paths"], ge=1)
    seed: int = Field(default=SIMULATION["seed"], ge=0)


class ToleranceSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    picard: float = Field(default=PICARD["tol"], gt=0.0)
    type2: float = Field(default=TYPE2["tol"], gt=0.0)


class ExperimentConfig(BaseModel):
    """
    A validated batch configuration.

    ``items`` keeps the canonical KEY=VALUE text the run was built from; its hash
    is stamped on every output row.
    """

    model_config = ConfigDict(frozen=True)

    problem: Dict[str, str]
    grid: GridSpec = GridSpec()
    partitions: List[int] = Field(default_factory=lambda: [4, 8, 16, 32])
    ensemble: EnsembleSpec = EnsembleSpec()
    backend: Literal["fd", "picard", "kernel"] = "fd"
    source_scheme: Literal["lagged", "heun"] = SOLVER["source_scheme"]
    tolerances: ToleranceSpec = ToleranceSpec()
    refine: int = Field(default=1, ge=1)
    suite: Optional[str] = None
    output_dir: str = OUTPUT["directory"]
    items: Dict[str, str] = Field(default_factory=dict)

    @field_validator("partitions")
    @classmethod
    def _positive_partitions(cls, value: List[int]) -> List[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("partition counts must be positive integers")
        return value

    @property
    def config_hash(self) -> str:
        return config_hash(self.items)

    def build_problem(self) -> Problem:
        return problem_from_config(self.problem, horizon=self.grid.horizon)

    @classmethod
    def from_items(cls, items: Dict[str, str], overrides: Optional[Dict[str, str]] = None) -> "ExperimentConfig":
        """
        Validate KEY=VALUE items (CLI overrides win) into a config.

        Raises:
            ConfigInvalid: Unknown problem, missing coefficient key or a malformed value.
        """
        merged = {key: str(value).strip() for key, value in items.items()}
        merged.update({key: str(value) for key, value in (overrides or {}).items() if value is not None})
        if "PROBLEM" not in merged:
            raise ConfigInvalid("Missing required config key 'PROBLEM'", key="PROBLEM")

        sections: Dict[str, Dict[str, str]] = {"grid": {}, "ensemble": {}, "tolerances": {}}
        for key, (section, name) in _LAYOUT.items():
            if key in merged:
                sections[section][name] = merged[key]
        payload = {
            "problem": {key: merged[key] for key in merged if key in PROBLEM_KEYS},
            **{section: values for section, values in sections.items()},
            "items": merged,
        }
        for key, name in (("BACKEND", "backend"), ("SOURCE_SCHEME", "source_scheme"), ("REFINE", "refine"),
                          ("SUITE", "suite"), ("OUTPUT_DIR", "output_dir")):
            if key in merged:
                payload[name] = merged[key]
        if "PARTITIONS" in merged:
            payload["partitions"] = [part.strip() for part in merged["PARTITIONS"].split(",") if part.strip()]

        try:
            config = cls.model_validate(payload)
        except ValidationError as exc:
            error = exc.errors()[0]
            location = ".".join(str(part) for part in error["loc"])
            key = _config_key(location)
            raise ConfigInvalid(f"Invalid config value for '{key}': {error['msg']}", key=key) from exc

        # unknown catalog names and missing coefficient keys surface here
        config.build_problem()
        logger.info(f"Loaded experiment config (problem={merged['PROBLEM']}, hash={config.config_hash[:12]})")
        return config

    @classmethod
    def from_file(cls, path: Union[str, Path], overrides: Optional[Dict[str, str]] = None) -> "ExperimentConfig":
        return cls.from_items(read_config_file(path), overrides)


def _config_key(location: str) -> str:
    for key, (section, name) in _LAYOUT.items():
        if location == f"{section}.{name}":
            return key
    return location.split(".")[0].upper()
