"""
Sweep Commands - gamma, epsilon, time-zero and domain-size studies
"""

import logging
from functools import partial

from conelab.commands.common import finish_run, initial_data, initial_profile, open_run, write_sweep
from conelab.config import LabConfig
from conelab.flow import run_flow
from conelab.sweeps import cusp_domain_stability, epsilon_sweep, gamma_sweep, time_zero_study, truncation_study
from conelab.utils.step_control import StepAbortedError

logger = logging.getLogger(__name__)


def sweep_gamma_command(manifest, config: LabConfig) -> int:
    """Conical runs along sweep.gammas against one cusp run"""
    run = open_run(manifest, config)
    if run.cached:
        return 0

    base = config.flow_config()
    result = gamma_sweep(
        base,
        config.sweep.gammas,
        compact_window=tuple(config.sweep.window),
        times=config.sweep.times,
        phi0=initial_data(config, base.mesh, manifest.seed),
        jobs=manifest.jobs,
    )
    finish_run(run, manifest, config, write_sweep(run, result), status=result.verdict)
    return 0


def sweep_eps_command(manifest, config: LabConfig) -> int:
    """Regularized runs over sweep.epsilons x sweep.j_list and the ordering chain"""
    run = open_run(manifest, config)
    if run.cached:
        return 0

    base = config.flow_config()
    result = epsilon_sweep(
        base,
        config.sweep.epsilons,
        config.sweep.j_list,
        phi0=initial_data(config, base.mesh, manifest.seed),
        times=config.sweep.times,
        jobs=manifest.jobs,
    )
    finish_run(run, manifest, config, write_sweep(run, result), status=result.verdict)
    return 0


def sweep_time_command(manifest, config: LabConfig) -> int:
    """L1 distance to the initial data along sweep.time_ladder"""
    run = open_run(manifest, config)
    if run.cached:
        return 0

    horizon = config.geometry.horizon_T
    ladder = tuple(t for t in config.sweep.time_ladder if 0 < t <= horizon)
    flow_config = config.flow_config(output_times=ladder)
    trajectory = run_flow(flow_config, initial_data(config, flow_config.mesh, manifest.seed))
    if trajectory.aborted:
        raise StepAbortedError("time-zero run aborted", reason=trajectory.abort_reason)
    result = time_zero_study(trajectory)
    finish_run(run, manifest, config, write_sweep(run, result), status=result.verdict)
    return 0


def sweep_domain_command(manifest, config: LabConfig) -> int:
    """Truncation study along sweep.u_mins, plus the cusp reference on a doubled domain"""
    run = open_run(manifest, config)
    if run.cached:
        return 0

    base = config.flow_config()
    result = truncation_study(
        base,
        config.sweep.u_mins,
        window=tuple(config.sweep.window),
        phi0_fn=partial(initial_profile, config, seed=manifest.seed),
        jobs=manifest.jobs,
    )
    artifacts = write_sweep(run, result)
    verdicts = [result.verdict]
    if base.geom.has_divisor:
        stability = cusp_domain_stability(base)
        artifacts += write_sweep(run, stability, name="domain_size_cusp")
        verdicts.append(stability.verdict)
    status = "pass" if all(v == "pass" for v in verdicts) else "fail"
    finish_run(run, manifest, config, artifacts, status=status)
    return 0
