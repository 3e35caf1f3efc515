"""Columnar archives, CSV tables and run manifests."""

import hashlib
import json
import logging
import platform
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from src.config.settings import OUTPUT
from src.utils.errors import ConfigInvalid

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


def save_columnar(path: Union[str, Path], columns: Dict[str, np.ndarray], header: Dict[str, Any]) -> Path:
    """
    Write arrays as named columns of a compressed archive with a JSON header.

    Args:
        path (str | Path): Target file; ``.npz`` is appended by numpy if missing.
        columns (Dict[str, np.ndarray]): Column name to array.
        header (Dict[str, Any]): JSON-serializable metadata (dims, grids, seeds...).

    Returns:
        Path: The written file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = dict(header)
    payload["format_version"] = FORMAT_VERSION
    payload["columns"] = sorted(columns)
    blob = np.frombuffer(json.dumps(payload, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    np.savez_compressed(path, header=blob, **columns)
    written = path if path.suffix == ".npz" else path.with_name(path.name + ".npz")
    logger.info(f"Wrote columnar archive {written} ({len(columns)} columns)")
    return written


def load_columnar(path: Union[str, Path], kind: Optional[str] = None) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """
    Read an archive written by :func:`save_columnar`.

    Args:
        path (str | Path): Archive path.
        kind (str, optional): Expected ``kind`` entry of the header.

    Returns:
        Tuple[Dict[str, np.ndarray], Dict[str, Any]]: Columns and header.
    """
    with np.load(Path(path), allow_pickle=False) as archive:
        header = json.loads(archive["header"].tobytes().decode("utf-8"))
        if header.get("format_version") != FORMAT_VERSION:
            raise ConfigInvalid(f"Unsupported archive format in {path}", key="format_version")
        if kind is not None and header.get("kind") != kind:
            raise ConfigInvalid(f"Archive {path} holds '{header.get('kind')}', expected '{kind}'", key="kind")
        columns = {name: archive[name] for name in header["columns"]}
    return columns, header


def write_table(rows: Union[pd.DataFrame, List[Dict[str, Any]]], path: Union[str, Path],
                config_hash: Optional[str] = None) -> Path:
    """
    Write a CSV table (UTF-8, header row, '.' decimal).

    Args:
        rows (DataFrame | List[Dict]): Table content.
        path (str | Path): Target CSV file.
        config_hash (str, optional): Stamped into a ``config_hash`` column of every row.

    Returns:
        Path: The written file.
    """
    frame = rows.copy() if isinstance(rows, pd.DataFrame) else pd.DataFrame(rows)
    if config_hash is not None:
        frame.insert(0, "config_hash", config_hash)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, encoding="utf-8", float_format=OUTPUT["float_format"])
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def config_hash(items: Dict[str, str]) -> str:
    """SHA-256 of the canonical KEY=VALUE text of a config."""
    canonical = "\n".join(f"{key}={items[key]}" for key in sorted(items))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(directory: Union[str, Path], config_digest: str, wall_times: Dict[str, float],
                   extra: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write ``manifest.json`` with versions, wall times and the run timestamp.

    Args:
        directory (str | Path): Output directory.
        config_digest (str): Config hash.
        wall_times (Dict[str, float]): Seconds per pipeline stage.
        extra (Dict, optional): Additional entries (exit status, checks...).

    Returns:
        Path: The manifest path.
    """
    import scipy
    import pydantic

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": config_digest,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "versions": {
            "package": "0.1.0",
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
            "pydantic": pydantic.VERSION,
        },
        "wall_times": wall_times,
    }
    if extra:
        manifest.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding="utf-8")
    return path
