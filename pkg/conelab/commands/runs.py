"""
Run Commands - single flows, estimate validation, manufactured solutions and comparisons
"""

import logging
from dataclasses import replace
from typing import List

import numpy as np

from conelab.commands.common import finish_run, initial_data, open_run, smooth_random_field, write_sweep
from conelab.compare import (
    ComparisonReport,
    build_subsolution,
    check_subsolution,
    contraction_test,
    ordering_chain,
)
from conelab.config import LabConfig
from conelab.errors import ConfigError
from conelab.estimates import run_validators
from conelab.flow import FlowVariant, flow_summary, mass_defect, run_flow
from conelab.sweeps import UNIFORMITY_LIMIT, estimate_uniformity, order_study, run_many
from conelab.utils.artifacts import write_csv, write_json, write_trajectory_csv, write_violations_csv
from conelab.utils.step_control import StepAbortedError

logger = logging.getLogger(__name__)

CONTRACTION_AMPLITUDE = 0.1


def run_command(manifest, config: LabConfig) -> int:
    """
    One flow with the configured variant.

    Writes trajectory.csv (t,u,chi,phidot,metric_density) and the
    trajectory.json sidecar. An aborted run keeps its partial artifacts
    and fails the command.
    """
    run = open_run(manifest, config)
    if run.cached:
        return 0

    flow_config = config.flow_config()
    phi0 = initial_data(config, flow_config.mesh, manifest.seed)
    trajectory = run_flow(flow_config, phi0)

    write_trajectory_csv(run.file("trajectory.csv"), trajectory)
    sidecar = flow_summary(trajectory)
    sidecar["mass_defect"] = [mass_defect(flow_config, s) for s in trajectory.states[1:]]
    write_json(run.file("trajectory.json"), sidecar)
    artifacts = ["trajectory.csv", "trajectory.json"]

    if trajectory.aborted:
        finish_run(run, manifest, config, artifacts, status="aborted")
        raise StepAbortedError(
            f"{flow_config.label} run aborted before horizon_T",
            t=float(trajectory.times[-1]),
            reason=trajectory.abort_reason,
        )
    finish_run(run, manifest, config, artifacts)
    return 0


def validate_command(manifest, config: LabConfig) -> int:
    """
    The estimate validators on the configured flow, plus the cusp bullets
    on a cusp run of the same geometry. With estimates.gamma_ladder the
    conical validators also run along sweep.gammas and uniformity.json
    records max|C| / min|C| per validator with a verdict.
    """
    run = open_run(manifest, config)
    if run.cached:
        return 0

    flow_config = config.flow_config()
    phi0 = initial_data(config, flow_config.mesh, manifest.seed)
    items = [(flow_config, phi0)]
    if flow_config.variant is not FlowVariant.CUSP:
        items.append((replace(flow_config, variant=FlowVariant.CUSP), phi0))
    trajectories = run_many(items, manifest.jobs)
    traj, traj_cusp = trajectories[0], trajectories[-1]

    reports = run_validators(
        traj,
        traj_cusp,
        sigma=config.estimates.sigma,
        delta=config.estimates.delta,
    )
    write_json(
        run.file("estimates.json"),
        {
            "variant": flow_config.label,
            "gamma": flow_config.gamma_eff,
            "reports": [r.to_dict() for r in reports],
        },
    )
    write_csv(
        run.file("estimates.csv"),
        ("proposition", "gamma", "fitted_C", "pass"),
        [(r.name, r.gamma, r.fitted_C, int(r.passed)) for r in reports],
    )
    failed = [r.name for r in reports if not r.passed]
    if failed:
        logger.warning("Estimates with non-finite constants", extra={"failed": failed})
    artifacts = ["estimates.json", "estimates.csv"]
    if config.estimates.gamma_ladder:
        artifacts += _write_uniformity(run, config, flow_config, phi0, manifest.jobs)
    finish_run(run, manifest, config, artifacts)
    return 0


def _write_uniformity(run, config: LabConfig, flow_config, phi0, jobs: int) -> List[str]:
    reports, ratios, verdict = estimate_uniformity(
        flow_config,
        config.sweep.gammas,
        phi0=phi0,
        jobs=jobs,
        sigma=config.estimates.sigma,
        delta=config.estimates.delta,
    )
    write_json(
        run.file("uniformity.json"),
        {
            "gammas": list(config.sweep.gammas),
            "limit": UNIFORMITY_LIMIT,
            "ratios": ratios,
            "verdict": verdict,
            "reports": [r.to_dict() for r in reports],
        },
    )
    write_csv(
        run.file("uniformity.csv"),
        ("proposition", "gamma", "fitted_C"),
        [(r.name, r.gamma, r.fitted_C) for r in reports],
    )
    logger.info(f"Estimate uniformity: {verdict}", extra={"ratios": ratios})
    return ["uniformity.json", "uniformity.csv"]


def mms_command(manifest, config: LabConfig) -> int:
    """Temporal and spatial observed orders against the default manufactured solution"""
    run = open_run(manifest, config)
    if run.cached:
        return 0

    temporal, spatial = order_study(config.flow_config())
    artifacts = write_sweep(run, temporal) + write_sweep(run, spatial)
    finish_run(run, manifest, config, artifacts)
    return 0


def _compare_times(config: LabConfig) -> List[float]:
    horizon = config.geometry.horizon_T
    t0, l = config.estimates.t0, config.estimates.l
    limit = min(1.0 / (2 * l), horizon)
    if not t0 < limit:
        raise ConfigError(
            f"estimates.t0={t0} must lie below min(1/(2l), horizon_T)={limit}",
            key="estimates.t0",
            invariant="t0 < 1/(2l)",
        )
    times = set(np.linspace(t0, limit, 5).tolist())
    times.update(t for t in config.sweep.times if 0 < t <= horizon)
    times.update(t for t in config.flow.output_times)
    return sorted(times)


def compare_command(manifest, config: LabConfig) -> int:
    """
    Sub-solutions for the conical and cusp flows, the contraction between
    two conical runs, and the conical <= cusp <= regularized chain.
    """
    if not config.geometry.gamma > 0:
        raise ConfigError("Conical requires gamma > 0", key="geometry.gamma", invariant="gamma > 0")
    run = open_run(manifest, config)
    if run.cached:
        return 0

    times = tuple(_compare_times(config))
    base = config.flow_config(output_times=times)
    mesh = base.mesh
    phi0 = initial_data(config, mesh, manifest.seed)
    rng = np.random.default_rng(manifest.seed + 1)
    perturbed = phi0 + CONTRACTION_AMPLITUDE * smooth_random_field(mesh.nodes, mesh.u_min, mesh.u_max, rng)

    conical_cfg = replace(base, variant=FlowVariant.CONICAL)
    items = [
        (conical_cfg, phi0),
        (replace(base, variant=FlowVariant.CUSP), phi0),
        (replace(base, variant=FlowVariant.REGULARIZED), phi0),
        (conical_cfg, perturbed),
    ]
    conical, cusp, regularized, conical_b = run_many(items, manifest.jobs)

    reports: List[ComparisonReport] = []
    if base.geom.has_divisor:
        for traj in (conical, cusp):
            sub = build_subsolution(traj, config.estimates.t0, config.estimates.l)
            report = check_subsolution(traj, sub)
            report.name = f"subsolution_{traj.config.label}"
            report.notes = f"t0={sub.t0}, l={sub.l}, C={sub.shift_C}"
            reports.append(report)
    else:
        logger.info("No divisor; sub-solution checks skipped")
    reports.append(contraction_test(conical, conical_b))
    reports.extend(ordering_chain(conical, cusp, regularized))

    violations = [v for r in reports for v in r.violations]
    write_json(run.file("comparison.json"), {"reports": [r.to_dict() for r in reports]})
    artifacts = ["comparison.json"]
    if write_violations_csv(run.file("violations.csv"), violations) is not None:
        artifacts.append("violations.csv")
        logger.warning("Comparison violations found", extra={"count": len(violations)})
    finish_run(run, manifest, config, artifacts, status="ok" if not violations else "violations")
    return 0
