"""
Sweep drivers for the limit statements.

gamma -> 0 (conical to cusp), epsilon -> 0 and j -> infinity
(regularized to conical), t -> 0 (attainment of the initial data), plus
scheme-order and domain-truncation studies. Independent runs within a
sweep may go to a process pool; aggregation is sequential.
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from conelab.compare import cusp_reference_bound, nodal_ordering, ordering_chain
from conelab.errors import DomainError
from conelab.estimates import EstimateReport, run_validators, uniformity_ratios
from conelab.flow import FlowConfig, FlowVariant, Trajectory, mms_run, run_flow
from conelab.mesh import anchored_uniform_mesh, integrate
from conelab.utils.step_control import StepAbortedError

logger = logging.getLogger(__name__)

ORDER_TOL = 1e-8
TIME_ZERO_TOL = 1e-3
UNIFORMITY_LIMIT = 3.0


class SweepAxis(str, Enum):
    GAMMA = "gamma"
    EPSILON = "epsilon"
    TIME_ZERO = "time_zero"
    MESH_REFINE = "mesh_refine"
    TIME_REFINE = "time_refine"
    DOMAIN_SIZE = "domain_size"


class SweepResult(BaseModel):
    """
    (parameter, metric) points of one sweep, sorted by parameter.

    verdict is "pass", "fail" or "flagged" (a guard tripped and the
    pass/fail reading is not meaningful). fit holds (rate, constant)
    where a fit applies; band is the half-width of its confidence band.
    """

    model_config = ConfigDict(use_enum_values=False)

    axis: SweepAxis
    points: List[Tuple[float, float]]
    verdict: str
    fit: Optional[Tuple[float, float]] = None
    band: Optional[float] = None
    details: Dict[str, Any] = Field(default_factory=dict)
    violations: List[Tuple[float, float, float, float]] = Field(default_factory=list)

    @field_validator("points")
    @classmethod
    def sort_and_check(cls, v):
        for _, value in v:
            if not math.isfinite(value):
                raise ValueError("sweep metric values must be finite")
        return sorted(v, key=lambda p: p[0])

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        payload = self.model_dump()
        payload["axis"] = self.axis.value
        payload["violation_count"] = len(self.violations)
        payload.pop("violations")
        return payload


def _run_job(item: Tuple[FlowConfig, np.ndarray]) -> Trajectory:
    config, phi0 = item
    return run_flow(config, phi0)


def run_many(items: Sequence[Tuple[FlowConfig, np.ndarray]], jobs: int = 1) -> List[Trajectory]:
    """
    Run independent flows, in a process pool when jobs > 1.

    Raises:
        StepAbortedError: any run aborted
    """
    if jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as executor:
            trajectories = list(executor.map(_run_job, items))
    else:
        trajectories = [_run_job(item) for item in items]
    for traj in trajectories:
        if traj.aborted:
            raise StepAbortedError(
                f"{traj.config.label} run aborted inside a sweep",
                gamma=traj.config.params.gamma,
                reason=traj.abort_reason,
            )
    return trajectories


def _phi0(config: FlowConfig, phi0: Optional[np.ndarray]) -> np.ndarray:
    return np.zeros(config.mesh.n) if phi0 is None else np.asarray(phi0, dtype=float)


def _strictly_decreasing(values: Sequence[float]) -> bool:
    return all(b < a for a, b in zip(values, values[1:]))


def _fields_at(traj: Trajectory, times: Sequence[float]) -> np.ndarray:
    return np.array([traj.state_at(t, atol=1e-12 * max(1.0, t)).chi + t * traj.config.psi_bullet for t in times])


def gamma_sweep(
    base_config: FlowConfig,
    gammas: Sequence[float],
    compact_window: Tuple[float, float] = (-5.0, 5.0),
    times: Sequence[float] = (0.1, 0.5, 0.9),
    phi0: Optional[np.ndarray] = None,
    jobs: int = 1,
) -> SweepResult:
    """
    Conical runs for each gamma plus one cusp run.

    d_k = max |phi_k - phi_(k+1)| and e_k = max |phi_k - phi_cusp| over the
    window and the given times; the verdict asks both to decrease strictly.
    """
    gammas = [float(g) for g in gammas]
    if not gammas or not _strictly_decreasing(gammas) or gammas[-1] <= 0:
        raise DomainError("gammas must be positive and strictly decreasing", gammas=gammas)
    times = sorted(float(t) for t in times)
    lo, hi = compact_window
    mesh = base_config.mesh
    touches = lo <= mesh.u_min or hi >= mesh.u_max
    window = mesh.window_mask(lo, hi)
    if not np.any(window):
        raise DomainError("window holds no mesh nodes", window=list(compact_window))
    phi0 = _phi0(base_config, phi0)

    items = []
    for gamma in gammas:
        params = base_config.params.model_copy(update={"gamma": gamma})
        items.append((replace(base_config, variant=FlowVariant.CONICAL, params=params, output_times=tuple(times)), phi0))
    items.append((replace(base_config, variant=FlowVariant.CUSP, output_times=tuple(times)), phi0))
    logger.info("Starting gamma sweep", extra={"gammas": gammas, "jobs": jobs})
    trajectories = run_many(items, jobs)

    fields = [_fields_at(traj, times)[:, window] for traj in trajectories]
    cusp = fields[-1]
    conical = fields[:-1]
    d = [float(np.max(np.abs(a - b))) for a, b in zip(conical, conical[1:])]
    e = [float(np.max(np.abs(a - cusp))) for a in conical]

    geom = base_config.geom
    u_window = mesh.nodes[window]
    psi_gap = float(np.max(geom.psi(u_window, gammas[-1]) - geom.psi(u_window, 0.0)))

    if touches:
        verdict = "flagged"
        note = "window touches boundary"
    else:
        verdict = "pass" if _strictly_decreasing(d) and _strictly_decreasing(e) else "fail"
        note = ""
    return SweepResult(
        axis=SweepAxis.GAMMA,
        points=list(zip(gammas, e)),
        verdict=verdict,
        details={
            "gammas": gammas,
            "d": d,
            "e": e,
            "times": times,
            "window": [lo, hi],
            "psi_gap": psi_gap,
            "note": note,
        },
    )


def estimate_uniformity(
    base_config: FlowConfig,
    gammas: Sequence[float],
    phi0: Optional[np.ndarray] = None,
    jobs: int = 1,
    sigma: float = 0.05,
    delta: float = 0.1,
    limit: float = UNIFORMITY_LIMIT,
) -> Tuple[List[EstimateReport], Dict[str, float], str]:
    """
    The conical validators along a gamma ladder.

    Returns every report, max|C| / min|C| per validator across the ladder
    and a verdict: "pass" when each ratio is at most limit.
    """
    gammas = [float(g) for g in gammas]
    if not gammas or min(gammas) <= 0:
        raise DomainError("gammas must be positive", gammas=gammas)
    phi0 = _phi0(base_config, phi0)
    items = []
    for gamma in gammas:
        params = base_config.params.model_copy(update={"gamma": gamma})
        items.append((replace(base_config, variant=FlowVariant.CONICAL, params=params), phi0))
    logger.info("Starting estimate ladder", extra={"gammas": gammas, "jobs": jobs})
    reports = []
    for traj in run_many(items, jobs):
        reports.extend(run_validators(traj, sigma=sigma, delta=delta))
    ratios = uniformity_ratios(reports)
    verdict = "pass" if all(r <= limit for r in ratios.values()) else "fail"
    return reports, ratios, verdict


def epsilon_sweep(
    base_config: FlowConfig,
    epsilons: Sequence[float],
    j_list: Sequence[int],
    phi0: Optional[np.ndarray] = None,
    times: Optional[Sequence[float]] = None,
    tol: float = ORDER_TOL,
    jobs: int = 1,
) -> SweepResult:
    """
    Ordering chain phi_gamma + t gamma ell <= phi_cusp <= phi_(eps, j) for
    every (eps, j) pair, plus the monotonicity of the regularized runs in
    eps and of their initial data in j.
    """
    epsilons = [float(e) for e in epsilons]
    j_list = [int(j) for j in j_list]
    if not epsilons or not _strictly_decreasing(epsilons) or epsilons[-1] <= 0:
        raise DomainError("epsilons must be positive and strictly decreasing", epsilons=epsilons)
    if not j_list or any(b <= a for a, b in zip(j_list, j_list[1:])) or j_list[0] < 1:
        raise DomainError("j_list must be increasing and >= 1", j_list=j_list)
    horizon = base_config.params.horizon_T
    if times is None:
        times = base_config.output_times or tuple(np.linspace(horizon / 10, horizon, 10))
    times = tuple(sorted(float(t) for t in times))
    phi0 = _phi0(base_config, phi0)

    grid = [(eps, j) for eps in epsilons for j in j_list]
    items = [
        (replace(base_config, variant=FlowVariant.CONICAL, output_times=times), phi0),
        (replace(base_config, variant=FlowVariant.CUSP, output_times=times), phi0),
    ]
    for eps, j in grid:
        params = base_config.params.model_copy(update={"epsilon": eps})
        items.append(
            (replace(base_config, variant=FlowVariant.REGULARIZED, params=params, mollify_j=j, output_times=times), phi0)
        )
    logger.info("Starting epsilon sweep", extra={"epsilons": epsilons, "j_list": j_list, "jobs": jobs})
    trajectories = run_many(items, jobs)
    conical, cusp, regularized = trajectories[0], trajectories[1], dict(zip(grid, trajectories[2:]))

    violations: List[Tuple[float, float, float, float]] = []
    chain = {}
    gaps = {}
    for (eps, j), traj in regularized.items():
        left, right = ordering_chain(conical, cusp, traj, tol)
        violations.extend(left.violations + right.violations)
        chain[f"{eps:g}/{j}"] = {"conical_vs_cusp": left.max_defect, "cusp_vs_regularized": right.max_defect}
        gap = _fields_at(traj, times) - _fields_at(cusp, times)
        gaps[(eps, j)] = float(np.max(gap))

    u = base_config.mesh.nodes
    monotone_eps = []
    for j in j_list:
        for a, b in zip(epsilons, epsilons[1:]):
            report = nodal_ordering(
                f"eps {b:g} <= eps {a:g} at j={j}",
                times,
                u,
                _fields_at(regularized[(b, j)], times),
                _fields_at(regularized[(a, j)], times),
                tol,
            )
            violations.extend(report.violations)
            monotone_eps.append(report.passed)
    monotone_j = []
    for eps in epsilons:
        for a, b in zip(j_list, j_list[1:]):
            report = nodal_ordering(
                f"initial data j={b} <= j={a} at eps={eps:g}",
                [0.0],
                u,
                regularized[(eps, b)].phi0,
                regularized[(eps, a)].phi0,
                tol,
            )
            violations.extend(report.violations)
            monotone_j.append(report.passed)

    verdict = "pass" if not violations else "fail"
    if violations:
        logger.warning("Epsilon sweep found ordering violations", extra={"count": len(violations)})
    j_last = j_list[-1]
    return SweepResult(
        axis=SweepAxis.EPSILON,
        points=[(eps, gaps[(eps, j_last)]) for eps in epsilons],
        verdict=verdict,
        details={
            "gamma": base_config.params.gamma,
            "epsilons": epsilons,
            "j_list": j_list,
            "times": list(times),
            "chain": chain,
            "gaps": {f"{eps:g}/{j}": v for (eps, j), v in gaps.items()},
            "monotone_in_epsilon": all(monotone_eps),
            "monotone_in_j": all(monotone_j),
        },
        violations=violations,
    )


def time_zero_study(traj: Trajectory, phi0: Optional[np.ndarray] = None) -> SweepResult:
    """
    y(t) = int |phi(t) - phi0| g du against y ~ A t (1 + |log t|).

    Verdict: y non-increasing toward t = 0, smallest value below
    TIME_ZERO_TOL, and max|y - fit| / max y <= 0.2. fit holds (A, 0).
    """
    mesh = traj.mesh
    g = traj.config.g
    phi0 = traj.phi0 if phi0 is None else np.asarray(phi0, dtype=float)
    mask = traj.times > 0
    t = traj.times[mask]
    if t.size < 2:
        raise DomainError("time-zero study needs at least two positive output times")
    y = np.array([integrate(mesh, g * np.abs(phi - phi0)) for phi in traj.phi[mask]])

    profile = t * (1.0 + np.abs(np.log(t)))
    coef = float(np.dot(profile, y) / np.dot(profile, profile))
    scale = float(np.max(y))
    residual = float(np.max(np.abs(y - coef * profile)) / scale) if scale > 0 else 0.0

    order = np.argsort(t)
    non_increasing = bool(np.all(np.diff(y[order]) >= -1e-14 * max(scale, 1.0)))
    small = float(np.min(y)) < TIME_ZERO_TOL
    verdict = "pass" if non_increasing and small and residual <= 0.2 else "fail"
    return SweepResult(
        axis=SweepAxis.TIME_ZERO,
        points=list(zip(t.tolist(), y.tolist())),
        verdict=verdict,
        fit=(coef, 0.0),
        details={
            "residual": residual,
            "threshold": TIME_ZERO_TOL,
            "non_increasing": non_increasing,
            "variant": traj.config.label,
        },
    )


def truncation_study(
    base_config: FlowConfig,
    u_mins: Sequence[float],
    window: Tuple[float, float] = (-5.0, 5.0),
    phi0_fn=None,
    jobs: int = 1,
) -> SweepResult:
    """
    Same spacing, growing domains anchored at u_max; the window nodes are
    shared bit-for-bit. Gap k compares domains k and k+1 over the window
    at the final time. Verdict: gaps decrease and the last is below 1e-5.
    """
    u_mins = [float(v) for v in u_mins]
    if len(u_mins) < 2 or any(b > a for a, b in zip(u_mins, u_mins[1:])):
        raise DomainError("u_mins must be non-increasing with at least two entries", u_mins=u_mins)
    lo, hi = window
    u_max = base_config.mesh.u_max
    if lo <= u_mins[0] or hi >= u_max:
        raise DomainError("window is wider than the smallest domain", window=list(window), u_min=u_mins[0])
    spacing = (u_max - base_config.mesh.u_min) / (base_config.mesh.n - 1)

    items = []
    for u_min in u_mins:
        mesh = anchored_uniform_mesh(u_min, u_max, spacing)
        phi0 = np.zeros(mesh.n) if phi0_fn is None else np.asarray(phi0_fn(mesh.nodes), dtype=float)
        items.append((replace(base_config, mesh=mesh), phi0))
    trajectories = run_many(items, jobs)

    finals = []
    for traj in trajectories:
        mask = traj.mesh.window_mask(lo, hi)
        finals.append(traj.phi[-1][mask])
    gaps = [float(np.max(np.abs(a - b))) for a, b in zip(finals, finals[1:])]
    lengths = [u_max - v for v in u_mins[1:]]
    decreasing = all(b <= a for a, b in zip(gaps, gaps[1:]))
    verdict = "pass" if decreasing and gaps[-1] < 1e-5 else "fail"
    return SweepResult(
        axis=SweepAxis.DOMAIN_SIZE,
        points=list(zip(lengths, gaps)),
        verdict=verdict,
        details={"u_mins": u_mins, "spacing": spacing, "window": [lo, hi], "gaps": gaps},
    )


def cusp_domain_stability(base_config: FlowConfig, factor: float = 2.0, rel_tol: float = 0.2) -> SweepResult:
    """sup |u - psi_o| of the cusp reference on the base domain and on one enlarged by `factor`"""
    mesh = base_config.mesh
    u_max = mesh.u_max
    spacing = (u_max - mesh.u_min) / (mesh.n - 1)
    points = []
    for scale in (1.0, factor):
        length = scale * (u_max - mesh.u_min)
        grid = anchored_uniform_mesh(u_max - length, u_max, spacing)
        points.append((length, cusp_reference_bound(base_config.geom, grid)))
    base, enlarged = points[0][1], points[1][1]
    change = abs(enlarged - base) / max(abs(base), 1e-12)
    return SweepResult(
        axis=SweepAxis.DOMAIN_SIZE,
        points=points,
        verdict="pass" if change <= rel_tol else "fail",
        details={"relative_change": change, "rel_tol": rel_tol},
    )


def order_study(config: FlowConfig, **ladder) -> Tuple[SweepResult, SweepResult]:
    """
    Temporal and spatial observed orders from mms_run; band = 2 standard errors.
    Expected: 1.0 +- 0.2 in time and 2.0 +- 0.3 in space.
    """
    table = mms_run(config, **ladder)
    results = []
    for axis, rungs, order, stderr, expected, slack in (
        (SweepAxis.TIME_REFINE, table.ladder("time"), table.temporal_order, table.temporal_stderr, 1.0, 0.2),
        (SweepAxis.MESH_REFINE, table.ladder("space"), table.spatial_order, table.spatial_stderr, 2.0, 0.3),
    ):
        verdict = "pass" if math.isfinite(order) and abs(order - expected) <= slack else "fail"
        results.append(
            SweepResult(
                axis=axis,
                points=[(r.step, r.error) for r in rungs],
                verdict=verdict,
                fit=(order, stderr) if math.isfinite(order) else None,
                band=2 * stderr if math.isfinite(stderr) else None,
                details={"expected": expected, "slack": slack, "variant": config.label},
            )
        )
    return results[0], results[1]
