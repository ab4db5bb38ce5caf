"""
Implicit time integration of the radial parabolic Monge-Ampère equation.

The unknown is the bounded difference chi = phi - t psi_*, with psi_* the
conical potential (Conical), the cusp potential (Cusp) or zero
(Regularized). At each node the discrete metric density is

    m = R(t) + D2 chi,   R(t) = g + t nu - t gamma theta_h + t Dpot psi_*,

where theta_h = -Dpot ell and Dpot is the second difference of a
closed-form potential, built from its cell increments, with the ghost
value at each end carrying a prescribed slope. chi itself is reflected
at both ends. The ghost slope of psi_* is its own slope at an end facing
the divisor; at a smooth end the conical potential takes the slope that
lines psi_gamma + gamma ell up with the cusp potential, so that
phi_gamma + t gamma ell and phi_cusp solve the same discrete equation up
to the divisor-end rows. Regularized uses the closed-form theta.

The time derivative of phi is

    phidot = log(m/g) + h + (1-gamma) ell_eff + forcing,

and chi moves with phidot - psi_*.
"""

import logging
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import cached_property
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import sympy

from conelab.errors import ConfigError, LabError, PositivityError
from conelab.geometry import ConeParams, ModelGeometry, check_horizon
from conelab.mesh import Mesh, build_mesh, curvature_from_increments, second_difference
from conelab.newton import solve_log_density
from conelab.utils.metrics import STEP_DURATION, MetricsHelper, RUNS_IN_PROGRESS, track_time
from conelab.utils.step_control import StepAbortedError, StepController

logger = logging.getLogger(__name__)

Forcing = Callable[[float, np.ndarray], np.ndarray]

MMS_T, MMS_U = sympy.symbols("t u", real=True)


class FlowVariant(str, Enum):
    CONICAL = "conical"
    REGULARIZED = "regularized"
    CUSP = "cusp"


@dataclass(frozen=True, eq=False)
class FlowConfig:
    """
    Everything a single run needs.

    dt_schedule, when given, is a sequence of (t_end, dt) pairs: dt applies
    on (previous t_end, t_end]. Otherwise steps grow like dt_growth * t
    between dt_initial and dt_max. Empty output_times records every step.
    """

    geom: ModelGeometry
    params: ConeParams
    mesh: Mesh
    variant: FlowVariant = FlowVariant.CONICAL
    mollify_j: int = 4
    mollify_radius: float = 1.0
    dt_schedule: Optional[Tuple[Tuple[float, float], ...]] = None
    dt_initial: float = 1e-3
    dt_growth: float = 0.05
    dt_max: float = 0.02
    output_times: Tuple[float, ...] = ()
    newton_tol: float = 1e-11
    newton_max_iter: int = 30
    positivity_floor_scale: float = 1e-14
    max_halvings: int = 8
    forcing: Optional[Forcing] = field(default=None, repr=False)

    def __post_init__(self):
        variant = FlowVariant(self.variant)
        object.__setattr__(self, "variant", variant)
        gamma = self.params.gamma
        if variant is FlowVariant.CONICAL and not gamma > 0:
            raise ConfigError("Conical requires gamma > 0", key="geometry.gamma", invariant="gamma > 0")
        if variant is FlowVariant.REGULARIZED:
            if not gamma > 0:
                raise ConfigError(
                    "Regularized requires gamma > 0", key="geometry.gamma", invariant="gamma > 0"
                )
            if not self.params.epsilon > 0:
                raise ConfigError(
                    "Regularized requires epsilon > 0", key="geometry.epsilon", invariant="epsilon > 0"
                )
        if self.mollify_j < 1:
            raise ConfigError("mollify_j must be >= 1", key="flow.mollify_j", invariant="j >= 1")
        if not (self.dt_initial > 0 and self.dt_max > 0 and self.dt_growth >= 0):
            raise ConfigError("time steps must be positive", key="flow.dt_initial", invariant="dt > 0")
        if self.dt_schedule is not None:
            schedule = tuple((float(a), float(b)) for a, b in self.dt_schedule)
            ends = [a for a, _ in schedule]
            if not schedule or any(b <= 0 for _, b in schedule):
                raise ConfigError("dt_schedule steps must be positive", key="flow.dt_schedule", invariant="dt > 0")
            if any(b <= a for a, b in zip(ends, ends[1:])) or ends[-1] < self.params.horizon_T:
                raise ConfigError(
                    "dt_schedule must be increasing and cover (0, horizon_T]",
                    key="flow.dt_schedule",
                    invariant="schedule covers (0, horizon_T]",
                )
            object.__setattr__(self, "dt_schedule", schedule)
        times = tuple(sorted(float(t) for t in self.output_times))
        if any(t <= 0 or t > self.params.horizon_T for t in times):
            raise ConfigError(
                "output times must lie in (0, horizon_T]",
                key="flow.output_times",
                invariant="0 < t <= horizon_T",
            )
        object.__setattr__(self, "output_times", times)
        check_horizon(self.geom, self.gamma_eff, self.params.horizon_T)

    @property
    def gamma_eff(self) -> float:
        """Cone parameter entering the equation; the cusp flow runs at gamma = 0"""
        return 0.0 if self.variant is FlowVariant.CUSP else self.params.gamma

    @property
    def label(self) -> str:
        return self.variant.value

    @cached_property
    def u(self) -> np.ndarray:
        return self.mesh.nodes

    @cached_property
    def g(self) -> np.ndarray:
        return self.geom.g(self.u)

    @cached_property
    def ell(self) -> np.ndarray:
        return self.geom.ell(self.u)

    @cached_property
    def ell_eff(self) -> np.ndarray:
        if not self.geom.has_divisor:
            return np.zeros(self.mesh.n)
        if self.variant is FlowVariant.REGULARIZED:
            return np.logaddexp(2.0 * math.log(self.params.epsilon), self.ell)
        return self.ell

    @cached_property
    def psi_bullet(self) -> np.ndarray:
        """psi_* on the nodes"""
        if self.variant is FlowVariant.REGULARIZED:
            return np.zeros(self.mesh.n)
        return self.geom.psi(self.u, self.gamma_eff)

    @cached_property
    def psi_end_slopes(self) -> Tuple[float, float]:
        """Ghost slopes of psi_* at (u_min, u_max)"""
        if self.variant is FlowVariant.REGULARIZED:
            return 0.0, 0.0
        return self.geom.matched_end_slopes(self.mesh.u_min, self.mesh.u_max, self.gamma_eff)

    @cached_property
    def chi_end_slope_rates(self) -> Tuple[float, float]:
        """
        chi'/t at (u_min, u_max) in the continuum problem the scheme solves;
        nonzero only where psi_* is matched to the cusp slope.
        """
        if self.variant is FlowVariant.REGULARIZED or not self.geom.has_divisor:
            return 0.0, 0.0
        ends = np.array([self.mesh.u_min, self.mesh.u_max])
        own = self.geom.psi_prime(ends, self.gamma_eff)
        return tuple(float(s - o) for s, o in zip(self.psi_end_slopes, own))

    @cached_property
    def psi_increments(self) -> np.ndarray:
        if self.variant is FlowVariant.REGULARIZED:
            return np.zeros(self.mesh.n - 1)
        return self.geom.psi_increments(self.u, self.gamma_eff)

    @cached_property
    def psi_curvature(self) -> np.ndarray:
        """Dpot psi_*"""
        if self.variant is FlowVariant.REGULARIZED:
            return np.zeros(self.mesh.n)
        return curvature_from_increments(self.mesh, self.psi_increments, *self.psi_end_slopes)

    @cached_property
    def theta_h(self) -> np.ndarray:
        """
        -Dpot ell, the discrete curvature of the divisor bundle metric; the
        closed form for Regularized
        """
        if not self.geom.has_divisor:
            return np.zeros(self.mesh.n)
        if self.variant is FlowVariant.REGULARIZED:
            return self.geom.theta_density(self.u)
        ends = self.geom.ell_bounded_prime(np.array([self.mesh.u_min, self.mesh.u_max]))
        increments = self.geom.ell_bounded_increments(self.u)
        return -curvature_from_increments(self.mesh, increments, float(ends[0]), float(ends[1]))

    @cached_property
    def nu(self) -> np.ndarray:
        return self.geom.nu_density(self.u)

    @cached_property
    def log_source(self) -> np.ndarray:
        """h + (1-gamma) ell_eff"""
        return self.geom.h_density(self.u) + (1.0 - self.gamma_eff) * self.ell_eff

    @cached_property
    def drift_increments(self) -> np.ndarray:
        """Increments of log_source - psi_*"""
        if self.variant is FlowVariant.REGULARIZED or not self.geom.has_divisor:
            return np.diff(self.log_source) - self.psi_increments
        ell_part = (1.0 - self.gamma_eff) * self.geom.ell_increments(self.u)
        return np.diff(self.geom.h_density(self.u)) + ell_part - self.psi_increments

    @cached_property
    def positivity_floor(self) -> float:
        return self.positivity_floor_scale * float(np.min(self.g))

    def reference_density(self, t: float) -> np.ndarray:
        """R(t); the mass of m - R vanishes"""
        return self.g + t * (self.nu - self.gamma_eff * self.theta_h + self.psi_curvature)

    def closed_reference_density(self, t: float, u: np.ndarray) -> np.ndarray:
        """Continuum counterpart of R(t): g + t nu_gamma + t psi_*''"""
        u = np.asarray(u, dtype=float)
        density = self.geom.g(u) + t * self.geom.nu_gamma_density(u, self.gamma_eff)
        if self.variant is not FlowVariant.REGULARIZED:
            density = density + t * self.geom.psi_second(u, self.gamma_eff)
        return density

    def forcing_at(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.mesh.n)
        return np.broadcast_to(np.asarray(self.forcing(t, self.u), dtype=float), (self.mesh.n,)).copy()

    def scheduled_dt(self, t: float) -> float:
        if self.dt_schedule is not None:
            for t_end, dt in self.dt_schedule:
                if t < t_end:
                    return dt
            return self.dt_schedule[-1][1]
        return min(self.dt_max, max(self.dt_initial, self.dt_growth * t))


@dataclass(frozen=True, eq=False)
class FlowState:
    t: float
    chi: np.ndarray
    phidot: np.ndarray
    metric_density: np.ndarray
    newton_iterations: int = 0
    # cell slopes of chi when a Newton solve produced them
    slopes: Optional[np.ndarray] = None


@dataclass(eq=False)
class Trajectory:
    """Recorded states plus solver statistics; the first state is the initial data"""

    config: FlowConfig
    states: List[FlowState]
    aborted: bool = False
    abort_reason: Optional[dict] = None
    dt_history: List[float] = field(default_factory=list)
    newton_history: List[int] = field(default_factory=list)
    halvings: int = 0

    @property
    def mesh(self) -> Mesh:
        return self.config.mesh

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    @property
    def chi(self) -> np.ndarray:
        return np.array([s.chi for s in self.states])

    @property
    def phidot(self) -> np.ndarray:
        return np.array([s.phidot for s in self.states])

    @property
    def metric_density(self) -> np.ndarray:
        return np.array([s.metric_density for s in self.states])

    @property
    def phi(self) -> np.ndarray:
        """phi = chi + t psi_* on every recorded state"""
        return self.chi + self.times[:, None] * self.config.psi_bullet[None, :]

    @property
    def phi0(self) -> np.ndarray:
        return self.states[0].chi

    def state_at(self, t: float, atol: float = 1e-12) -> FlowState:
        for state in self.states:
            if abs(state.t - t) <= atol:
                return state
        raise KeyError(f"no recorded state at t={t}")

    def stats(self) -> dict:
        return {
            "steps": len(self.dt_history),
            "newton_iterations": list(self.newton_history),
            "dt_history": list(self.dt_history),
            "halvings": self.halvings,
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
        }


def rhs(config: FlowConfig, t: float, chi: np.ndarray) -> np.ndarray:
    """
    Time derivative of phi at (t, chi).

    Raises:
        PositivityError: the discrete metric density is not above the floor
    """
    density = config.reference_density(t) + second_difference(config.mesh, chi)
    bad = np.flatnonzero(density <= config.positivity_floor)
    if bad.size:
        raise PositivityError(f"metric density not positive at t={t}", nodes=bad)
    return np.log(density / config.g) + config.log_source + config.forcing_at(t)


def _state_from(config: FlowConfig, t: float, chi: np.ndarray, iterations: int = 0) -> FlowState:
    density = config.reference_density(t) + second_difference(config.mesh, chi)
    phidot = np.log(density / config.g) + config.log_source + config.forcing_at(t)
    return FlowState(t=t, chi=chi, phidot=phidot, metric_density=density, newton_iterations=iterations)


def step_backward_euler(
    config: FlowConfig, state: FlowState, dt: float, t_new: Optional[float] = None
) -> FlowState:
    """
    One implicit Euler step: chi+ = chi + dt (rhs(t+dt, chi+) - psi_*).

    t_new overrides state.t + dt so that steps can land exactly on an
    output time.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    t_new = state.t + dt if t_new is None else t_new
    base = config.reference_density(t_new)
    forcing = config.forcing_at(t_new)
    b = state.chi + dt * (config.log_source - config.psi_bullet + forcing)
    h = config.mesh.spacing
    slopes = np.diff(state.chi) / h if state.slopes is None else state.slopes
    b_increments = h * slopes + dt * (config.drift_increments + np.diff(forcing))
    result = solve_log_density(
        config.mesh,
        base,
        config.g,
        dt,
        b,
        state.chi,
        config.newton_tol,
        config.newton_max_iter,
        config.positivity_floor,
        label=f"{config.label} step to t={t_new:.6g}",
        slopes0=slopes,
        b_increments=b_increments,
    )
    MetricsHelper.record_newton("step", result.iterations)
    phidot = np.log(result.density / config.g) + config.log_source + forcing
    return FlowState(
        t=t_new,
        chi=result.solution,
        phidot=phidot,
        metric_density=result.density,
        newton_iterations=result.iterations,
        slopes=result.slopes,
    )


def mollify_initial(mesh: Mesh, phi0_raw: np.ndarray, j: int, radius: float = 1.0) -> np.ndarray:
    """
    Upper regularization of bounded initial data.

    A sup-convolution over |u' - u| <= 2 rho_j followed by the mean over
    |u' - u| <= rho_j, with rho_j = radius * 3^(1-j). The result is >= the
    input, nodally decreasing in j, and equal to the input once rho_j is
    below the smallest cell.
    """
    if j < 1:
        raise ValueError("mollify_initial requires j >= 1")
    values = np.asarray(phi0_raw, dtype=float)
    u = mesh.nodes
    rho = radius * 3.0 ** (1 - j)
    slack = 1e-9 * rho
    sup_lo = np.searchsorted(u, u - 2 * rho - slack, side="left")
    sup_hi = np.searchsorted(u, u + 2 * rho + slack, side="right")
    upper = np.array([values[a:b].max() for a, b in zip(sup_lo, sup_hi)])
    mean_lo = np.searchsorted(u, u - rho + slack, side="left")
    mean_hi = np.searchsorted(u, u + rho - slack, side="right")
    return np.array([upper[a:b].mean() for a, b in zip(mean_lo, mean_hi)])


def initial_chi(config: FlowConfig, phi0: np.ndarray) -> np.ndarray:
    phi0 = np.array(phi0, dtype=float)
    if phi0.shape != (config.mesh.n,) or not np.all(np.isfinite(phi0)):
        raise ValueError("initial data must be a finite nodal field")
    if config.variant is FlowVariant.REGULARIZED:
        return mollify_initial(config.mesh, phi0, config.mollify_j, config.mollify_radius)
    return phi0


def _warn_conditioning(config: FlowConfig, chi0: np.ndarray) -> None:
    h = config.mesh.spacing
    cell = np.empty(config.mesh.n)
    cell[0], cell[-1] = h[0], h[-1]
    cell[1:-1] = np.minimum(h[:-1], h[1:])
    resolution = float(np.min(config.g * cell * cell))
    threshold = 1e3 * np.finfo(float).eps * float(np.max(np.abs(chi0)))
    if resolution < threshold:
        logger.warning(
            "Second differences of the initial data are not resolved in floating point near the mesh ends",
            extra={"resolution": resolution, "threshold": threshold, "u_min": config.mesh.u_min},
        )


def _targets(config: FlowConfig) -> List[float]:
    horizon = config.params.horizon_T
    targets = list(config.output_times)
    if not targets or targets[-1] < horizon:
        targets.append(horizon)
    return targets


def run_flow(config: FlowConfig, phi0: np.ndarray) -> Trajectory:
    """
    Integrate from t = 0 to horizon_T.

    States are recorded at output_times (or after every step when none
    are configured) and always at horizon_T. A step that cannot be taken
    after max_halvings halvings ends the run; the partial trajectory is
    returned with aborted set.
    """
    chi0 = initial_chi(config, phi0)
    _warn_conditioning(config, chi0)

    initial = _state_from(config, 0.0, chi0)
    if np.any(initial.metric_density <= 0):
        logger.warning(
            "Initial data is not strictly plurisubharmonic on the grid; phidot at t=0 is undefined",
            extra={"variant": config.label},
        )
        initial = replace(initial, phidot=np.full(config.mesh.n, np.nan))

    trajectory = Trajectory(config=config, states=[initial])
    controller = StepController(config.label, max_halvings=config.max_halvings)
    record_every_step = not config.output_times
    timed_step = track_time(STEP_DURATION, {"variant": config.label})(step_backward_euler)

    logger.info(
        "Starting flow run",
        extra={
            "variant": config.label,
            "gamma": config.gamma_eff,
            "n": config.mesh.n,
            "horizon_T": config.params.horizon_T,
        },
    )
    started = time.perf_counter()
    RUNS_IN_PROGRESS.inc()
    state = initial
    try:
        for target in _targets(config):
            while state.t < target:
                remaining = target - state.t
                dt = config.scheduled_dt(state.t)
                if remaining <= dt * (1.0 + 1e-7):
                    dt = remaining
                elif remaining < 1.5 * dt:
                    dt = remaining / 2.0

                current = state

                def attempt(step_dt: float) -> FlowState:
                    landing = target if step_dt == remaining else None
                    try:
                        result = timed_step(config, current, step_dt, t_new=landing)
                    except LabError:
                        MetricsHelper.record_step(config.label, accepted=False)
                        raise
                    MetricsHelper.record_step(config.label, accepted=True)
                    return result

                try:
                    state, used = controller.call(attempt, dt)
                except StepAbortedError as e:
                    MetricsHelper.record_abort(config.label)
                    trajectory.aborted = True
                    trajectory.abort_reason = e.to_dict()
                    trajectory.halvings = controller.total_halvings
                    logger.error(
                        f"Flow run aborted at t={current.t:.6g}",
                        extra={"variant": config.label, "t": current.t, "dt": dt},
                    )
                    return trajectory

                trajectory.dt_history.append(used)
                trajectory.newton_history.append(state.newton_iterations)
                if record_every_step and state.t < target:
                    trajectory.states.append(state)
            trajectory.states.append(state)
    finally:
        RUNS_IN_PROGRESS.dec()

    trajectory.halvings = controller.total_halvings
    logger.info(
        "Flow run completed",
        extra={
            "variant": config.label,
            "gamma": config.gamma_eff,
            "steps": len(trajectory.dt_history),
            "halvings": trajectory.halvings,
            "duration_ms": round((time.perf_counter() - started) * 1000, 2),
        },
    )
    return trajectory


def mass_defect(config: FlowConfig, state: FlowState) -> float:
    """Quadrature of m - R(t); zero up to round-off"""
    return float(np.dot(config.mesh.quad_weights, state.metric_density - config.reference_density(state.t)))


# Method of manufactured solutions


@dataclass(frozen=True)
class MmsRow:
    ladder: str  # 'time' or 'space'
    step: float
    dt: float
    n: int
    error: float


@dataclass
class MmsTable:
    rows: List[MmsRow]
    temporal_order: float = math.nan
    temporal_stderr: float = math.nan
    spatial_order: float = math.nan
    spatial_stderr: float = math.nan

    def ladder(self, name: str) -> List[MmsRow]:
        return [r for r in self.rows if r.ladder == name]

    def to_dict(self) -> dict:
        return {
            "rows": [r.__dict__ for r in self.rows],
            "temporal_order": self.temporal_order,
            "temporal_stderr": self.temporal_stderr,
            "spatial_order": self.spatial_order,
            "spatial_stderr": self.spatial_stderr,
        }


def default_manufactured_solution(
    u_min: float,
    u_max: float,
    slope_rates: Tuple[float, float] = (0.0, 0.0),
    linear_in_t: bool = False,
    amplitude: float = 0.05,
) -> sympy.Expr:
    """
    A T(t) G(u) + t sigma(u) on [u_min, u_max].

    G' = (E - E(u_min)) (E(u_max) - E) with E = expit(u), so G has zero
    slope at both ends and |G''| <= g: the density stays a fixed fraction
    of g however far the grid reaches. T is t for the spatial ladder
    (which backward Euler then integrates exactly) and 1 - exp(-2t)
    otherwise. sigma is the quadratic whose end slopes are slope_rates.
    """
    expit_u = 1 / (1 + sympy.exp(-MMS_U))
    lo = 1 / (1 + sympy.exp(-sympy.Float(u_min)))
    hi = 1 / (1 + sympy.exp(-sympy.Float(u_max)))
    log1pexp = sympy.log(1 + sympy.exp(MMS_U))
    profile = (lo + hi - 1) * log1pexp - (1 - expit_u) - lo * hi * MMS_U
    time_factor = MMS_T if linear_in_t else 1 - sympy.exp(-2 * MMS_T)
    left, right = (sympy.Float(s) for s in slope_rates)
    length = sympy.Float(u_max - u_min)
    offset = MMS_U - sympy.Float(u_min)
    sigma = left * offset + (right - left) * offset**2 / (2 * length)
    return sympy.Float(amplitude) * time_factor * profile + MMS_T * sigma


def _lambdify(expr: sympy.Expr) -> Callable[[float, np.ndarray], np.ndarray]:
    fn = sympy.lambdify((MMS_T, MMS_U), expr, modules="numpy")

    def evaluate(t: float, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        return np.broadcast_to(np.asarray(fn(t, u), dtype=float), u.shape).copy()

    return evaluate


@dataclass(frozen=True)
class ManufacturedForcing:
    """forcing = chi*_t - (log((R + chi*_uu)/g) + h + (1-gamma) ell_eff - psi_*), closed form"""

    config: FlowConfig
    chi_t: Callable
    chi_uu: Callable

    def __call__(self, t: float, u: np.ndarray) -> np.ndarray:
        cfg = self.config
        u = np.asarray(u, dtype=float)
        density = cfg.closed_reference_density(t, u) + self.chi_uu(t, u)
        ell_eff = _closed_ell_eff(cfg, u)
        psi = np.zeros_like(u) if cfg.variant is FlowVariant.REGULARIZED else cfg.geom.psi(u, cfg.gamma_eff)
        return self.chi_t(t, u) - (
            np.log(density / cfg.geom.g(u)) + cfg.geom.h_density(u) + (1.0 - cfg.gamma_eff) * ell_eff - psi
        )


def _closed_ell_eff(config: FlowConfig, u: np.ndarray) -> np.ndarray:
    if not config.geom.has_divisor:
        return np.zeros_like(u)
    ell = config.geom.ell(u)
    if config.variant is FlowVariant.REGULARIZED:
        return np.logaddexp(2.0 * math.log(config.params.epsilon), ell)
    return ell


def _mms_error(
    config: FlowConfig,
    exact: Callable,
    forcing_exprs: Tuple[Callable, Callable],
    mesh: Mesh,
    dt: float,
    horizon: float,
    exclude_boundary: bool,
) -> float:
    params = config.params.model_copy(update={"horizon_T": horizon})
    base = replace(
        config,
        params=params,
        mesh=mesh,
        dt_schedule=((horizon, dt),),
        output_times=(horizon,),
        forcing=None,
    )
    forced = replace(base, forcing=ManufacturedForcing(base, *forcing_exprs))
    trajectory = run_flow(forced, exact(0.0, mesh.nodes))
    if trajectory.aborted:
        raise LabError("manufactured-solution run aborted", reason=trajectory.abort_reason)
    final = trajectory.states[-1]
    error = np.abs(final.chi - exact(final.t, mesh.nodes))
    if exclude_boundary:
        error = error[1:-1]
    return float(np.max(error))


def observed_order(steps: Sequence[float], errors: Sequence[float]) -> Tuple[float, float]:
    """Least-squares slope of log error against log step, with its standard error"""
    x = np.log(np.asarray(steps, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    coeffs, cov = np.polyfit(x, y, 1, cov=True)
    return float(coeffs[0]), float(math.sqrt(max(cov[0, 0], 0.0)))


def mms_run(
    config: FlowConfig,
    exact_chi: Optional[sympy.Expr] = None,
    time_steps: Sequence[float] = (0.1, 0.05, 0.025, 0.0125),
    time_nodes: int = 513,
    time_horizon: float = 1.0,
    mesh_sizes: Optional[Sequence[int]] = None,
    space_dt: float = 1e-3,
    space_horizon: float = 0.5,
    exclude_boundary: Optional[bool] = None,
    mesh_spacings: Sequence[float] = (0.4, 0.2, 0.1, 0.05),
) -> MmsTable:
    """
    Refinement ladders for a manufactured solution chi*(t, u).

    exact_chi is a sympy expression in MMS_T and MMS_U used on both
    ladders; by default default_manufactured_solution on the config's
    mesh bounds, linear in t on the spatial ladder. Without mesh_sizes the
    spatial ladder uses uniform grids at mesh_spacings. Boundary rows are
    left out of the sup error when the mesh ends face a divisor, unless
    told otherwise. Empty ladders are skipped.
    """
    u_min, u_max = config.mesh.u_min, config.mesh.u_max
    if exclude_boundary is None:
        exclude_boundary = config.geom.has_divisor
    if mesh_sizes is None:
        mesh_sizes = [max(8, int(round((u_max - u_min) / h)) + 1) for h in mesh_spacings]

    def pieces(linear_in_t: bool):
        expr = exact_chi
        if expr is None:
            expr = default_manufactured_solution(u_min, u_max, config.chi_end_slope_rates, linear_in_t)
        return _lambdify(expr), (_lambdify(sympy.diff(expr, MMS_T)), _lambdify(sympy.diff(expr, MMS_U, 2)))

    rows: List[MmsRow] = []
    if time_steps:
        exact, forcing_exprs = pieces(linear_in_t=False)
        fine = build_mesh(u_min, u_max, time_nodes)
        for dt in time_steps:
            err = _mms_error(config, exact, forcing_exprs, fine, dt, time_horizon, exclude_boundary)
            rows.append(MmsRow("time", dt, dt, time_nodes, err))
            logger.info("MMS temporal rung", extra={"dt": dt, "error": err})
    if mesh_sizes:
        exact, forcing_exprs = pieces(linear_in_t=True)
        for n in mesh_sizes:
            mesh = build_mesh(u_min, u_max, n)
            h = float(np.max(mesh.spacing))
            err = _mms_error(config, exact, forcing_exprs, mesh, space_dt, space_horizon, exclude_boundary)
            rows.append(MmsRow("space", h, space_dt, n, err))
            logger.info("MMS spatial rung", extra={"n": n, "error": err})

    table = MmsTable(rows)
    for ladder, attr in (("time", "temporal"), ("space", "spatial")):
        rungs = table.ladder(ladder)
        errors = [r.error for r in rungs]
        if len(rungs) >= 4 and all(e > 0 for e in errors):
            order, stderr = observed_order([r.step for r in rungs], errors)
            setattr(table, f"{attr}_order", order)
            setattr(table, f"{attr}_stderr", stderr)
    return table


def flow_summary(trajectory: Trajectory) -> Dict[str, object]:
    """Sidecar payload for a trajectory CSV"""
    cfg = trajectory.config
    return {
        "variant": cfg.label,
        "gamma": cfg.params.gamma,
        "gamma_eff": cfg.gamma_eff,
        "epsilon": cfg.params.epsilon,
        "horizon_T": cfg.params.horizon_T,
        "divisor": cfg.geom.kind.value,
        "mesh": {"u_min": cfg.mesh.u_min, "u_max": cfg.mesh.u_max, "n": cfg.mesh.n},
        "output_times": list(cfg.output_times),
        "solver": trajectory.stats(),
    }
