"""
Shared plumbing for command handlers: initial data, run directories, sweep artifacts
"""

import logging
from pathlib import Path
from typing import List, Optional

import numpy as np

from conelab import __version__
from conelab.config import InitialData, LabConfig, dump_config, settings
from conelab.mesh import Mesh
from conelab.sweeps import SweepAxis, SweepResult
from conelab.utils.artifacts import (
    RunDirectory,
    generate_config_key,
    write_csv,
    write_json,
    write_violations_csv,
)
from conelab.utils.metrics import MetricsHelper

logger = logging.getLogger(__name__)

RANDOM_MODES = 4

POINT_COLUMNS = {
    SweepAxis.GAMMA: ("gamma", "e"),
    SweepAxis.EPSILON: ("epsilon", "gap"),
    SweepAxis.TIME_ZERO: ("t", "l1"),
    SweepAxis.MESH_REFINE: ("h", "error"),
    SweepAxis.TIME_REFINE: ("dt", "error"),
    SweepAxis.DOMAIN_SIZE: ("length", "gap"),
}


def smooth_random_field(u: np.ndarray, u_min: float, u_max: float, rng: np.random.Generator) -> np.ndarray:
    """Cosine modes with 1/k^2 decay, normalized to sup norm 1"""
    coeffs = rng.uniform(-1.0, 1.0, RANDOM_MODES)
    phase = (np.asarray(u, dtype=float) - u_min) / (u_max - u_min)
    field = sum(c * np.cos(np.pi * k * phase) / k**2 for k, c in enumerate(coeffs, start=1))
    scale = float(np.max(np.abs(field)))
    return field / scale if scale > 0 else np.zeros_like(phase)


def initial_profile(config: LabConfig, u: np.ndarray, seed: int) -> np.ndarray:
    """
    Bounded initial potential at the nodes u.

    zero: identically 0. bump: a Gaussian centred at u = 0. random: a
    smooth field drawn from default_rng(seed); its modes are laid out on
    the configured mesh bounds, so every domain sees the same function.
    """
    u = np.asarray(u, dtype=float)
    amplitude = config.flow.initial_amplitude
    kind = config.flow.initial_data
    if kind is InitialData.ZERO:
        return np.zeros_like(u)
    if kind is InitialData.BUMP:
        return amplitude * np.exp(-u * u / 8.0)
    rng = np.random.default_rng(seed)
    return amplitude * smooth_random_field(u, config.mesh.u_min, config.mesh.u_max, rng)


def initial_data(config: LabConfig, mesh: Mesh, seed: int) -> np.ndarray:
    return initial_profile(config, mesh.nodes, seed)


def open_run(manifest, config: LabConfig, **extra) -> RunDirectory:
    """Content-addressed directory for this command, config and seed"""
    key = generate_config_key(manifest.command.value, config.canonical(), seed=manifest.seed, **extra)
    run = RunDirectory(Path(manifest.out_dir), key)
    if run.cached:
        logger.info(
            f"Reusing finished run {run.path}",
            extra={"command": manifest.command.value, "key": key},
        )
        return run
    return run.prepare()


def write_sweep(run: RunDirectory, result: SweepResult, name: Optional[str] = None) -> List[str]:
    """sweep_<name>.json, sweep_<name>.csv with the points, and violations.csv when any"""
    name = name or result.axis.value
    json_name, csv_name = f"sweep_{name}.json", f"sweep_{name}.csv"
    write_json(run.file(json_name), result.to_dict())
    write_csv(run.file(csv_name), POINT_COLUMNS[result.axis], result.points)
    written = [json_name, csv_name]
    if write_violations_csv(run.file("violations.csv"), result.violations) is not None:
        written.append("violations.csv")
    logger.info(
        f"Sweep {name}: {result.verdict}",
        extra={"axis": result.axis.value, "points": len(result.points), "violations": len(result.violations)},
    )
    return written


def finish_run(run: RunDirectory, manifest, config: LabConfig, artifacts: List[str], status: str = "ok") -> None:
    """Config echo, metrics dump and finally the manifest that marks the run complete"""
    run.file("config.txt").write_text(dump_config(config))
    files = {"config.txt"} | {a for a in artifacts if run.file(a).exists()}
    if settings.metrics_enabled and MetricsHelper.write(run.file("metrics.prom")) is not None:
        files.add("metrics.prom")
    run.write_manifest(
        {
            "command": manifest.command.value,
            "seed": manifest.seed,
            "status": status,
            "version": __version__,
            "config": config.canonical(),
            "artifacts": sorted(files),
        }
    )
    logger.info(
        f"Artifacts written to {run.path}",
        extra={"command": manifest.command.value, "artifacts": len(files)},
    )
