"""
Comparison-principle oracles.

Sub-solutions built from an auxiliary elliptic Monge-Ampère solve, the
contraction between two runs of the same flow, and the ordering of the
conical, cusp and regularized runs. All checks are nodal; violations are
returned as (t, u, lhs, rhs) rows.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from conelab.errors import AdmissibilityError, ConfigError, DomainError, HorizonError
from conelab.flow import FlowVariant, Trajectory
from conelab.geometry import ModelGeometry
from conelab.mesh import Mesh, curvature_from_increments
from conelab.newton import solve_log_density
from conelab.utils.metrics import MetricsHelper

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
TIME_ATOL = 1e-12


@dataclass
class ComparisonReport:
    name: str
    passed: bool
    max_defect: float
    bound: float = 0.0
    curve: List[Tuple[float, float]] = field(default_factory=list)
    violations: List[Tuple[float, float, float, float]] = field(default_factory=list)
    notes: str = ""

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "pass": self.passed,
            "max_defect": self.max_defect,
            "bound": self.bound,
            "curve": [list(p) for p in self.curve],
            "violation_count": len(self.violations),
            "notes": self.notes,
        }


@dataclass(frozen=True, eq=False)
class EllipticProblem:
    """
    g + Dpot(kappa psi) + D2 v = g exp(k (v + kappa psi) + source - (1-gamma) ell)

    for the bounded unknown v = u - kappa psi, with psi the conical
    potential (gamma > 0) or the cusp potential (gamma = 0).
    """

    geom: ModelGeometry
    gamma: float
    source_field: np.ndarray
    potential_scale: float = 1.0
    rhs_potential_coeff: float = 1.0

    def __post_init__(self):
        if not self.rhs_potential_coeff > 0:
            raise DomainError("elliptic problem must be monotone: rhs_potential_coeff > 0")
        if not self.geom.has_divisor:
            raise DomainError("elliptic reference problems need a divisor")

    def weight_field(self, u: np.ndarray) -> np.ndarray:
        """log of the |s|^(-2(1-gamma)) weight"""
        return -(1.0 - self.gamma) * self.geom.ell(u)

    def potential_pieces(self, mesh: Mesh) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        (psi, increments of psi, Dpot psi) on the mesh, with the ghost
        slopes the flow of the same gamma uses
        """
        u = mesh.nodes
        psi = self.geom.psi(u, self.gamma)
        increments = self.geom.psi_increments(u, self.gamma)
        slopes = self.geom.matched_end_slopes(mesh.u_min, mesh.u_max, self.gamma)
        return psi, increments, curvature_from_increments(mesh, increments, *slopes)


def solve_elliptic(
    problem: EllipticProblem,
    mesh: Mesh,
    tol: float = 1e-11,
    max_iter: int = 50,
    floor_scale: float = 1e-14,
    initial: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Newton solve of the elliptic problem; returns u = v + kappa psi.

    Raises:
        ConvergenceError, PositivityError: from the Newton kernel
    """
    source = np.asarray(problem.source_field, dtype=float)
    if source.shape != (mesh.n,):
        raise DomainError("source field does not match the mesh", n=mesh.n)
    u = mesh.nodes
    g = problem.geom.g(u)
    psi, psi_increments, curvature = problem.potential_pieces(mesh)
    kappa = problem.potential_scale
    k = problem.rhs_potential_coeff

    base = g + kappa * curvature
    b = -kappa * psi - (source + problem.weight_field(u)) / k
    weight_increments = -(1.0 - problem.gamma) * problem.geom.ell_increments(u)
    b_increments = -kappa * psi_increments - (np.diff(source) + weight_increments) / k
    v0 = np.zeros(mesh.n) if initial is None else np.asarray(initial, dtype=float) - kappa * psi
    result = solve_log_density(
        mesh,
        base,
        g,
        1.0 / k,
        b,
        v0,
        tol,
        max_iter,
        floor_scale * float(np.min(g)),
        label="elliptic",
        b_increments=b_increments,
    )
    MetricsHelper.record_newton("elliptic", result.iterations)
    logger.debug(
        "Elliptic solve converged",
        extra={"gamma": problem.gamma, "iterations": result.iterations, "residual": result.residual},
    )
    return result.solution + kappa * psi


def cusp_reference_bound(geom: ModelGeometry, mesh: Mesh) -> float:
    """sup |u - psi_o| for the cusp reference solution with zero source"""
    problem = EllipticProblem(geom=geom, gamma=0.0, source_field=np.zeros(mesh.n))
    u = solve_elliptic(problem, mesh)
    return float(np.max(np.abs(u - geom.psi(mesh.nodes, 0.0))))


@dataclass(eq=False)
class SubSolution:
    """
    Lower barrier M(t) for the flow restarted at t0, on the flow's own
    output times t0 + t. chi_values holds M - (t0 + t) psi_*.
    """

    variant: FlowVariant
    t0: float
    l: float
    elliptic_solution: np.ndarray
    times: np.ndarray
    chi_values: np.ndarray
    values: np.ndarray
    shift_C: float = 0.0


def _t_log_t(t: float) -> float:
    return t * math.log(t) - t if t > 0 else 0.0


def _check_admissibility(traj: Trajectory, t0: float, l: float, kappa: float) -> None:
    cfg = traj.config
    g = cfg.g
    if cfg.variant is FlowVariant.CUSP:
        lhs = (2 * l - 1 - 2 * l * t0) * g + (1 + 2 * l * t0) * cfg.nu
        if np.any(lhs < 0):
            raise AdmissibilityError(
                "l is not admissible: (2l - 1 - 2l t0) omega + (1 + 2l t0) nu must be nonnegative",
                l=l,
                t0=t0,
            )
        if np.any(g + cfg.psi_curvature <= 0):
            raise AdmissibilityError("discrete cusp metric density is not positive")
        return

    nu_gamma = cfg.geom.nu_gamma_density(cfg.u, cfg.gamma_eff)
    if np.any((2 * l - 1) * g + nu_gamma < g / 2):
        raise AdmissibilityError(
            "l is not admissible: (2l - 1) omega + nu_gamma >= omega/2 fails", l=l
        )
    nu_h = cfg.nu - cfg.gamma_eff * cfg.theta_h
    if np.any((2 * l - 1) * g + kappa * nu_h < 0):
        raise AdmissibilityError(
            "l is not admissible on the grid: (2l - 1) omega + kappa nu_gamma must be nonnegative",
            l=l,
            kappa=kappa,
        )


def build_subsolution(traj: Trajectory, t0: float, l: float = 2.0) -> SubSolution:
    """
    Sub-solution started from the recorded state at t0.

    Conical:  M(t) = (1 - 2lt) phi(t0) + t u + (t log t - t), with u solving
              the elliptic problem with source -2l phi(t0), kappa = 1 + 2l t0.
    Cusp:     M(t) = (1 - 2lt) phi(t0) + 2l t t0 psi_o + t u + (t log t - t) - C t,
              u the cusp reference with zero source, C = max(0, max(-2l chi(t0))).

    Defined for t0 + t <= 1/(2l) on the trajectory's output times.

    Raises:
        HorizonError: t0 is not positive, not recorded, or beyond 1/(2l)
        AdmissibilityError: l violates the class positivity condition
    """
    cfg = traj.config
    if cfg.variant is FlowVariant.REGULARIZED:
        raise DomainError("sub-solutions are built for the conical and cusp flows")
    if not t0 > 0 or not l > 0:
        raise HorizonError("build_subsolution requires t0 > 0 and l > 0", t0=t0, l=l)
    if t0 > 1.0 / (2 * l):
        raise HorizonError("t0 exceeds 1/(2l)", t0=t0, l=l)
    try:
        start = traj.state_at(t0, atol=TIME_ATOL * max(1.0, t0))
    except KeyError:
        raise HorizonError(f"t0={t0} is not an output time of the trajectory", t0=t0)

    cusp = cfg.variant is FlowVariant.CUSP
    kappa = 1.0 if cusp else 1.0 + 2 * l * t0
    _check_admissibility(traj, t0, l, kappa)

    psi = cfg.psi_bullet
    phi_t0 = start.chi + start.t * psi
    if cusp:
        problem = EllipticProblem(geom=cfg.geom, gamma=0.0, source_field=np.zeros(cfg.mesh.n))
        shift = max(0.0, float(np.max(-2 * l * start.chi)))
    else:
        problem = EllipticProblem(
            geom=cfg.geom,
            gamma=cfg.gamma_eff,
            source_field=-2 * l * phi_t0,
            potential_scale=kappa,
        )
        shift = 0.0
    u_sol = solve_elliptic(problem, cfg.mesh, tol=cfg.newton_tol, max_iter=max(cfg.newton_max_iter, 50))
    v = u_sol - kappa * psi

    limit = 1.0 / (2 * l)
    times, chi_values, values = [], [], []
    for state in traj.states:
        if state.t < start.t or state.t > limit * (1 + 1e-12):
            continue
        t = 0.0 if state is start else state.t - start.t
        chi_m = (1 - 2 * l * t) * start.chi + t * v + _t_log_t(t) - shift * t
        if state is start:
            chi_m = start.chi.copy()
        times.append(state.t)
        chi_values.append(chi_m)
        values.append(chi_m + state.t * psi)

    logger.info(
        "Sub-solution built",
        extra={"variant": cfg.label, "t0": t0, "l": l, "kappa": kappa, "points": len(times)},
    )
    return SubSolution(
        variant=cfg.variant,
        t0=t0,
        l=l,
        elliptic_solution=u_sol,
        times=np.array(times),
        chi_values=np.array(chi_values),
        values=np.array(values),
        shift_C=shift,
    )


def check_subsolution(traj: Trajectory, sub: SubSolution, tol: float = DEFAULT_TOL) -> ComparisonReport:
    """M(t) <= phi(t0 + t) nodally, compared through chi"""
    lower, upper = [], []
    for t, chi_m in zip(sub.times, sub.chi_values):
        lower.append(chi_m)
        upper.append(traj.state_at(t, atol=TIME_ATOL * max(1.0, t)).chi)
    return nodal_ordering(
        "subsolution", sub.times, traj.mesh.nodes, np.array(lower), np.array(upper), tol
    )


def nodal_ordering(
    name: str,
    times: Sequence[float],
    u: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    tol: float = DEFAULT_TOL,
) -> ComparisonReport:
    """lower <= upper + tol at every (time, node)"""
    times = np.asarray(times, dtype=float)
    lower = np.atleast_2d(lower)
    upper = np.atleast_2d(upper)
    defect = lower - upper
    violations = []
    for i, j in zip(*np.nonzero(defect > tol)):
        violations.append((float(times[i]), float(u[j]), float(lower[i, j]), float(upper[i, j])))
    max_defect = float(np.max(defect)) if defect.size else -math.inf
    curve = [(float(t), float(np.max(d))) for t, d in zip(times, defect)]
    if violations:
        logger.warning(f"Ordering '{name}' violated at {len(violations)} nodes", extra={"max_defect": max_defect})
    return ComparisonReport(
        name=name,
        passed=not violations,
        max_defect=max_defect,
        bound=tol,
        curve=curve,
        violations=violations,
    )


def _require_same_grid(a: Trajectory, b: Trajectory) -> None:
    if a.mesh.n != b.mesh.n or not np.array_equal(a.mesh.nodes, b.mesh.nodes):
        raise ConfigError("trajectories are on different meshes", invariant="same mesh")
    if a.config.geom != b.config.geom:
        raise ConfigError("trajectories use different geometries", invariant="same geometry")


def shared_times(a: Trajectory, b: Trajectory, atol: float = TIME_ATOL) -> List[Tuple[int, int]]:
    """Index pairs of states recorded at the same time in both trajectories"""
    pairs = []
    tb = b.times
    for i, t in enumerate(a.times):
        hits = np.flatnonzero(np.abs(tb - t) <= atol * max(1.0, abs(t)))
        if hits.size:
            pairs.append((i, int(hits[0])))
    return pairs


def contraction_test(traj_a: Trajectory, traj_b: Trajectory, tol: float = DEFAULT_TOL) -> ComparisonReport:
    """
    t -> max(phi_A(t) - phi_B(t)) stays below max(phi_A(0) - phi_B(0)) + tol.

    Raises:
        ConfigError: the runs do not share a configuration
    """
    _require_same_grid(traj_a, traj_b)
    ca, cb = traj_a.config, traj_b.config
    if (
        ca.variant is not cb.variant
        or ca.params != cb.params
        or ca.forcing is not cb.forcing
    ):
        raise ConfigError("contraction needs two runs of the same flow", invariant="same configuration")

    bound = float(np.max(traj_a.phi0 - traj_b.phi0))
    curve, violations = [], []
    u = traj_a.mesh.nodes
    for i, j in shared_times(traj_a, traj_b):
        diff = traj_a.states[i].chi - traj_b.states[j].chi
        t = float(traj_a.states[i].t)
        curve.append((t, float(np.max(diff))))
        for k in np.flatnonzero(diff > bound + tol):
            violations.append((t, float(u[k]), float(diff[k]), bound))
    max_defect = max(c for _, c in curve) - bound if curve else -math.inf
    return ComparisonReport(
        name="contraction",
        passed=not violations,
        max_defect=max_defect,
        bound=bound,
        curve=curve,
        violations=violations,
    )


def ordering_vs_regularized(
    traj_conical: Trajectory, traj_regularized: Trajectory, tol: float = DEFAULT_TOL
) -> ComparisonReport:
    """phi_gamma(t) + t gamma ell <= phi_eps(t) at every shared output time"""
    _require_same_grid(traj_conical, traj_regularized)
    if traj_conical.config.variant is not FlowVariant.CONICAL:
        raise ConfigError("first trajectory must be conical", invariant="variant order")
    if traj_regularized.config.variant is not FlowVariant.REGULARIZED:
        raise ConfigError("second trajectory must be regularized", invariant="variant order")

    cfg = traj_conical.config
    pairs = shared_times(traj_conical, traj_regularized)
    times = [traj_conical.states[i].t for i, _ in pairs]
    lower = np.array(
        [traj_conical.states[i].chi + traj_conical.states[i].t * (cfg.psi_bullet + cfg.gamma_eff * cfg.ell) for i, _ in pairs]
    )
    upper = np.array([traj_regularized.states[j].chi for _, j in pairs])
    report = nodal_ordering("conical_vs_regularized", times, cfg.u, lower, upper, tol)
    report.notes = (
        f"gamma={cfg.gamma_eff}, epsilon={traj_regularized.config.params.epsilon}, "
        f"j={traj_regularized.config.mollify_j}"
    )
    return report


def ordering_chain(
    traj_conical: Trajectory,
    traj_cusp: Trajectory,
    traj_regularized: Trajectory,
    tol: float = DEFAULT_TOL,
) -> Tuple[ComparisonReport, ComparisonReport]:
    """phi_gamma + t gamma ell <= phi_cusp <= phi_eps at the times all three share"""
    _require_same_grid(traj_conical, traj_cusp)
    _require_same_grid(traj_cusp, traj_regularized)
    conical_cfg = traj_conical.config
    cusp_cfg = traj_cusp.config
    rows = []
    for i, j in shared_times(traj_conical, traj_cusp):
        t = traj_conical.states[i].t
        hits = np.flatnonzero(np.abs(traj_regularized.times - t) <= TIME_ATOL * max(1.0, t))
        if hits.size:
            rows.append((i, j, int(hits[0]), t))
    times = [r[3] for r in rows]
    conical = np.array(
        [traj_conical.states[i].chi + t * (conical_cfg.psi_bullet + conical_cfg.gamma_eff * conical_cfg.ell) for i, _, _, t in rows]
    )
    cusp = np.array([traj_cusp.states[j].chi + t * cusp_cfg.psi_bullet for _, j, _, t in rows])
    regularized = np.array([traj_regularized.states[k].chi for _, _, k, _ in rows])
    u = conical_cfg.u
    return (
        nodal_ordering("conical_vs_cusp", times, u, conical, cusp, tol),
        nodal_ordering("cusp_vs_regularized", times, u, cusp, regularized, tol),
    )
