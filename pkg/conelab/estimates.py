"""
A-priori estimate validators.

Each validator turns one inequality into a max-scan over the recorded
(t, u) grid: fitted_C is the smallest constant for which the inequality
holds on the trajectory. sup, inf and osc of the initial data are taken
over the truncated grid.
"""

import logging
import math
from typing import Dict, Iterable, List, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from conelab.errors import DomainError
from conelab.flow import FlowVariant, Trajectory
from conelab.geometry import ConeParams, cusp_metric_density, model_metric_density

logger = logging.getLogger(__name__)

DIMENSION = 1


class EstimateReport(BaseModel):
    """Fitted constant of one estimate on one trajectory"""

    model_config = ConfigDict(populate_by_name=True)

    name: str
    fitted_C: float
    gamma: float
    aux: Dict[str, float] = Field(default_factory=dict)
    passed: bool = Field(default=True, alias="pass")
    notes: str = ""

    def to_dict(self) -> dict:
        return self.model_dump(by_alias=True)


def _report(name: str, traj: Trajectory, fitted: float, aux: Optional[dict] = None, notes: str = "") -> EstimateReport:
    aux = {k: float(v) for k, v in (aux or {}).items()}
    finite = math.isfinite(fitted) and all(math.isfinite(v) for v in aux.values())
    report = EstimateReport(
        name=name,
        fitted_C=float(fitted),
        gamma=traj.config.gamma_eff,
        aux=aux,
        passed=finite,
        notes=notes,
    )
    logger.debug(f"Estimate {name}: C={fitted:.6g}", extra={"gamma": report.gamma})
    return report


def _positive_times(traj: Trajectory, lo: float = 0.0, hi: float = math.inf, closed_lo: bool = False) -> np.ndarray:
    t = traj.times
    mask = (t >= lo) if closed_lo else (t > lo)
    mask &= t <= hi
    mask &= t > 0
    if not np.any(mask):
        raise DomainError("trajectory has no recorded states in the scanned time range", lo=lo, hi=hi)
    return mask


def check_upper_bound(traj: Trajectory) -> EstimateReport:
    """phi <= sup phi0 + t psi + C t"""
    mask = _positive_times(traj)
    t = traj.times[mask][:, None]
    chi = traj.chi[mask]
    fitted = np.max((chi - np.max(traj.phi0)) / t)
    return _report("upper_bound", traj, fitted)


def check_lower_bound_short(traj: Trajectory) -> EstimateReport:
    """
    phi >= inf phi0 + t psi - C_flat and
    phi >= phi0 + t psi + n (t log t - t) - C_log t, on (0, min(1, T)]
    """
    mask = _positive_times(traj, hi=min(1.0, traj.config.params.horizon_T))
    t = traj.times[mask][:, None]
    chi = traj.chi[mask]
    phi0 = traj.phi0[None, :]
    c_flat = np.max(np.min(traj.phi0) - chi)
    c_log = np.max((phi0 - chi + DIMENSION * (t * np.log(t) - t)) / t)
    return _report("lower_bound_short", traj, c_flat, {"C_log": c_log})


def check_phidot_upper(traj: Trajectory, delta: float = 0.1) -> EstimateReport:
    """
    phidot <= psi + C on [delta, T]; the first form
    phidot <= (phi - phi0)/t + n is reported in aux as its defect.
    """
    psi = traj.config.psi_bullet[None, :]
    mask = _positive_times(traj)
    t = traj.times[mask][:, None]
    phidot = traj.phidot[mask]
    first = np.max(phidot - (traj.phi[mask] - traj.phi0[None, :]) / t - DIMENSION)

    late = _positive_times(traj, lo=delta, closed_lo=True)
    fitted = np.max(traj.phidot[late] - psi)
    return _report("phidot_upper", traj, fitted, {"first_form": first, "delta": delta})


def check_phidot_lower(traj: Trajectory, sigma: float = 0.05) -> EstimateReport:
    """
    sigma (phidot - psi) >= -2 osc phi0 + n log t - C on (0, min(1, T)];
    the (T - t)-weighted form (T - t)(phidot - psi) >= -C goes to aux.
    """
    if not sigma > 0:
        raise DomainError("sigma must be positive", sigma=sigma)
    horizon = traj.config.params.horizon_T
    psi = traj.config.psi_bullet[None, :]
    osc = float(np.max(traj.phi0) - np.min(traj.phi0))

    mask = _positive_times(traj, hi=min(1.0, horizon))
    t = traj.times[mask][:, None]
    fitted = np.max(-sigma * (traj.phidot[mask] - psi) - 2 * osc + DIMENSION * np.log(t))

    every = _positive_times(traj)
    weight = (horizon - traj.times[every])[:, None]
    t_form = np.max(-weight * (traj.phidot[every] - psi))
    return _report("phidot_lower", traj, fitted, {"T_form": t_form, "sigma": sigma})


def model_density_for(traj: Trajectory) -> np.ndarray:
    """Model metric the trace bound is measured against"""
    cfg = traj.config
    if cfg.variant is FlowVariant.CUSP:
        return cusp_metric_density(cfg.geom, cfg.u) if cfg.geom.has_divisor else cfg.g
    if cfg.variant is FlowVariant.REGULARIZED:
        return cfg.g
    return model_metric_density(cfg.geom, ConeParams(gamma=cfg.gamma_eff, horizon_T=cfg.params.horizon_T), cfg.u)


def check_trace_sandwich(traj: Trajectory) -> EstimateReport:
    """t^2 |log(m / w_model)| <= C; in one complex dimension the trace is the density ratio"""
    mask = _positive_times(traj)
    t = traj.times[mask][:, None]
    ratio = np.log(traj.metric_density[mask] / model_density_for(traj)[None, :])
    fitted = np.max(t * t * np.abs(ratio))
    return _report("trace_sandwich", traj, fitted)


def check_global_lower(traj: Trajectory) -> EstimateReport:
    """phi >= t psi - C"""
    mask = _positive_times(traj)
    fitted = np.max(-traj.chi[mask])
    return _report("global_lower", traj, fitted)


def check_cusp_bullets(traj_cusp: Trajectory) -> EstimateReport:
    """
    Bounds on the cusp flow against psi_o and omega_o:

    -C + a log t <= phidot - psi_o   (fitted_C, with a >= 0 from a log-linear fit)
    phidot - psi_o <= C_upper / t
    exp(-C_sandwich / t^2) omega_o <= omega(t)
    |phi - t psi_o| <= sup_chi
    """
    cfg = traj_cusp.config
    if cfg.variant is not FlowVariant.CUSP:
        raise DomainError("cusp bullets need a cusp trajectory", variant=cfg.label)
    mask = _positive_times(traj_cusp)
    t = traj_cusp.times[mask]
    excess = traj_cusp.phidot[mask] - cfg.psi_bullet[None, :]
    floor = np.min(excess, axis=1)

    log_t = np.log(t)
    slope = 0.0
    if t.size >= 2 and np.ptp(log_t) > 0:
        slope = float(np.polyfit(log_t, floor, 1)[0])
    a = max(0.0, slope)
    fitted = np.max(a * log_t - floor)

    c_upper = np.max(t[:, None] * excess)
    omega_o = model_density_for(traj_cusp)[None, :]
    c_sandwich = max(0.0, float(np.max(t[:, None] ** 2 * np.log(omega_o / traj_cusp.metric_density[mask]))))
    sup_chi = np.max(np.abs(traj_cusp.chi))
    return _report(
        "cusp_bullets",
        traj_cusp,
        fitted,
        {"a": a, "C_upper": c_upper, "C_sandwich": c_sandwich, "sup_chi": sup_chi},
    )


def run_validators(
    traj: Trajectory,
    traj_cusp: Optional[Trajectory] = None,
    sigma: float = 0.05,
    delta: float = 0.1,
) -> List[EstimateReport]:
    """The six conical validators, plus the cusp bullets when a cusp run is given"""
    reports = [
        check_upper_bound(traj),
        check_lower_bound_short(traj),
        check_phidot_upper(traj, delta=delta),
        check_phidot_lower(traj, sigma=sigma),
        check_trace_sandwich(traj),
        check_global_lower(traj),
    ]
    if traj_cusp is not None:
        reports.append(check_cusp_bullets(traj_cusp))
    return reports


def uniformity_ratios(reports: Iterable[EstimateReport]) -> Dict[str, float]:
    """max |C| / min |C| per estimate across the reports (e.g. a gamma ladder)"""
    by_name: Dict[str, List[float]] = {}
    for report in reports:
        by_name.setdefault(report.name, []).append(abs(report.fitted_C))
    ratios = {}
    for name, values in by_name.items():
        finite = [v for v in values if math.isfinite(v)]
        if len(finite) != len(values) or not finite:
            ratios[name] = math.inf
            continue
        ratios[name] = max(finite) / max(min(finite), 1e-12)
    return ratios
