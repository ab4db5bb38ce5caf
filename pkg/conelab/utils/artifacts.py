"""
Artifact Store
Content-addressed run directories and the CSV/JSON writers used by every command
"""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from conelab.errors import ArtifactError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
MANIFEST_NAME = "manifest.json"


def _jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and non-finite floats into plain JSON values"""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    return value


def generate_config_key(prefix: str, *args, **kwargs) -> str:
    """
    Generate a content-addressed key for a configuration.

    Uses SHA256 of the canonical JSON of the arguments.

    Args:
        prefix: Key prefix (the command name, e.g. "run", "sweep-gamma")
        *args: Canonical configuration payloads
        **kwargs: Extra keyed payloads (seed, axis, ...)

    Returns:
        "<prefix>-<16 hex chars>"
    """
    key_parts = [json.dumps(_jsonable(arg), sort_keys=True, default=str) for arg in args]
    for k in sorted(kwargs.keys()):
        key_parts.append(f"{k}:{json.dumps(_jsonable(kwargs[k]), sort_keys=True, default=str)}")

    args_hash = hashlib.sha256("|".join(key_parts).encode()).hexdigest()[:16]
    return f"{prefix}-{args_hash}"


class RunDirectory:
    """
    One content-addressed output directory.

    A directory whose manifest already exists is a finished run; it is
    reported as cached and nothing in it is rewritten.
    """

    def __init__(self, root: Path, key: str):
        self.root = Path(root)
        self.key = key
        self.path = self.root / key

    @property
    def manifest_path(self) -> Path:
        return self.path / MANIFEST_NAME

    @property
    def cached(self) -> bool:
        return self.manifest_path.exists()

    def prepare(self) -> "RunDirectory":
        try:
            self.path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ArtifactError(f"cannot create run directory {self.path}: {e}")
        return self

    def file(self, name: str) -> Path:
        return self.path / name

    def write_manifest(self, payload: dict) -> Path:
        if self.cached:
            raise ArtifactError(
                f"refusing to overwrite finished run {self.path}", path=str(self.path)
            )
        return write_json(self.manifest_path, payload)


def write_json(path: Path, payload: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def read_json(path: Path) -> Any:
    try:
        with open(path) as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"cannot read {path}: {e}", path=str(path))


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
    """Write numeric rows with 17 significant digits; strings pass through"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return FLOAT_FORMAT % float(value)
        return str(value)

    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(fmt(v) for v in row) + "\n")
    return path


def write_trajectory_csv(path: Path, trajectory) -> Path:
    """One row per (output time, node): t,u,chi,phidot,metric_density"""
    nodes = trajectory.mesh.nodes

    def rows():
        for state in trajectory.states:
            for i in range(nodes.size):
                yield (
                    float(state.t),
                    float(nodes[i]),
                    float(state.chi[i]),
                    float(state.phidot[i]),
                    float(state.metric_density[i]),
                )

    return write_csv(path, ("t", "u", "chi", "phidot", "metric_density"), rows())


def write_violations_csv(path: Path, violations: Sequence[tuple]) -> Optional[Path]:
    if not violations:
        return None
    return write_csv(path, ("t", "u", "lhs", "rhs"), violations)
