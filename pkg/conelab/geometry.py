"""
Background geometry of the radial model.

All (1,1)-forms are stored as densities with respect to
beta = i dz^dz_bar / |z|^2 in the coordinate u = log|z|^2; for an
S^1-invariant function f(u) the form i dd^c f has density f''(u).
With this convention the round metric has density g(u) = e^u/(1+e^u)^2
and Gauss curvature 2.

The reference volume form is the background metric itself, so the Ricci
potential h vanishes identically.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from conelab.errors import DomainError, HorizonError, PositivityError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class DivisorKind(str, Enum):
    """Divisor configurations on the model sphere"""

    ONE_POINT = "one_point"  # divisor at u = -inf
    TWO_POINT = "two_point"  # divisor at both poles, degree-2 section
    NONE = "none"  # smoke configuration, no divisor and no twist


class DivisorConfig(BaseModel):
    """Divisor, twist and Hermitian rescaling data"""

    model_config = ConfigDict(frozen=True)

    kind: DivisorKind = DivisorKind.ONE_POINT
    twist_c: float = 1.0
    rescale_lambda: float = Field(default=0.005, gt=0.0, lt=1.0)
    delta_cap: float = Field(default=0.01, gt=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_rescale_below_cap(self):
        if not self.rescale_lambda < self.delta_cap:
            raise ValueError(
                "rescale_lambda must be strictly below delta_cap "
                f"({self.rescale_lambda} >= {self.delta_cap})"
            )
        return self


class ConeParams(BaseModel):
    """Cone angle, regularization and run horizon"""

    model_config = ConfigDict(frozen=True)

    gamma: float = Field(default=0.5, ge=0.0, le=1.0)
    epsilon: float = Field(default=0.1, ge=0.0)
    horizon_T: float = Field(default=1.0, gt=0.0)


def round_density(u: ArrayLike) -> ArrayLike:
    """Density of the round metric, e^u/(1+e^u)^2, evaluated without overflow"""
    return expit(u) * expit(-np.asarray(u, dtype=float))


def _log1pexp(u: ArrayLike) -> ArrayLike:
    return np.logaddexp(0.0, u)


@dataclass(frozen=True)
class ModelGeometry:
    """
    Closed-form radial densities for a divisor configuration.

    The section norm r = |s|_h^2 is normalised so that sup r equals
    rescale_lambda, which keeps log r below log(delta_cap) everywhere.
    """

    divisor: DivisorConfig

    @property
    def kind(self) -> DivisorKind:
        return self.divisor.kind

    @property
    def has_divisor(self) -> bool:
        return self.kind is not DivisorKind.NONE

    def g(self, u: ArrayLike) -> ArrayLike:
        return round_density(u)

    def ell(self, u: ArrayLike) -> ArrayLike:
        """log of the section norm; zero field for the smoke configuration"""
        u = np.asarray(u, dtype=float)
        lam = self.divisor.rescale_lambda
        if self.kind is DivisorKind.ONE_POINT:
            return math.log(lam) + u - _log1pexp(u)
        if self.kind is DivisorKind.TWO_POINT:
            return math.log(4.0 * lam) + u - 2.0 * _log1pexp(u)
        return np.zeros_like(u)

    def ell_prime(self, u: ArrayLike) -> ArrayLike:
        u = np.asarray(u, dtype=float)
        if self.kind is DivisorKind.ONE_POINT:
            return expit(-u)
        if self.kind is DivisorKind.TWO_POINT:
            return expit(-u) - expit(u)
        return np.zeros_like(u)

    def ell_second(self, u: ArrayLike) -> ArrayLike:
        return -self.theta_density(u)

    def section_norm(self, u: ArrayLike) -> ArrayLike:
        return np.exp(self.ell(u))

    def theta_density(self, u: ArrayLike) -> ArrayLike:
        """Curvature form of the divisor bundle metric"""
        u = np.asarray(u, dtype=float)
        if self.kind is DivisorKind.ONE_POINT:
            return self.g(u)
        if self.kind is DivisorKind.TWO_POINT:
            return 2.0 * self.g(u)
        return np.zeros_like(u)

    def ricci_density(self, u: ArrayLike) -> ArrayLike:
        return 2.0 * self.g(u)

    def nu_density(self, u: ArrayLike) -> ArrayLike:
        """-Ric + theta + eta with eta = twist_c times the round metric"""
        u = np.asarray(u, dtype=float)
        if not self.has_divisor:
            return np.zeros_like(u)
        return (
            -self.ricci_density(u)
            + self.theta_density(u)
            + self.divisor.twist_c * self.g(u)
        )

    def nu_gamma_density(self, u: ArrayLike, gamma: float) -> ArrayLike:
        return self.nu_density(u) - gamma * self.theta_density(u)

    def h_density(self, u: ArrayLike) -> ArrayLike:
        return np.zeros_like(np.asarray(u, dtype=float))

    def psi(self, u: ArrayLike, gamma: float) -> ArrayLike:
        """Reference potential: conical for gamma > 0, cusp for gamma = 0"""
        if not self.has_divisor:
            return np.zeros_like(np.asarray(u, dtype=float))
        ell = self.ell(u)
        if gamma > 0:
            return psi_gamma_of_ell(gamma, ell)
        return psi_cusp_of_ell(ell)

    def psi_prime(self, u: ArrayLike, gamma: float) -> ArrayLike:
        if not self.has_divisor:
            return np.zeros_like(np.asarray(u, dtype=float))
        d1, _ = _psi_ell_derivatives(gamma, self.ell(u))
        return d1 * self.ell_prime(u)

    def psi_second(self, u: ArrayLike, gamma: float) -> ArrayLike:
        """Second u-derivative of the reference potential by the chain rule"""
        if not self.has_divisor:
            return np.zeros_like(np.asarray(u, dtype=float))
        d1, d2 = _psi_ell_derivatives(gamma, self.ell(u))
        lp = self.ell_prime(u)
        return d2 * lp * lp + d1 * self.ell_second(u)

    @property
    def divisor_ends(self) -> Tuple[bool, bool]:
        """Whether the lower and upper ends of a u-grid face a divisor point"""
        if self.kind is DivisorKind.ONE_POINT:
            return True, False
        if self.kind is DivisorKind.TWO_POINT:
            return True, True
        return False, False

    def matched_end_slopes(self, u_min: float, u_max: float, gamma: float) -> Tuple[float, float]:
        """
        Ghost slopes of the reference potential at the two grid ends.

        An end facing a divisor carries the potential's own slope. At a
        smooth end the conical potential takes psi_o' - gamma ell', so that
        psi_gamma + gamma ell leaves the grid with the cusp potential's
        slope; for gamma = 0 the two rules agree.
        """
        ends = np.array([u_min, u_max], dtype=float)
        if not self.has_divisor:
            return 0.0, 0.0
        own = self.psi_prime(ends, gamma)
        matched = self.psi_prime(ends, 0.0) - gamma * self.ell_prime(ends)
        slopes = np.where(self.divisor_ends, own, matched)
        return float(slopes[0]), float(slopes[1])

    # Cell increments between consecutive nodes. ell - u is bounded at the
    # divisor end, and its increments keep their relative accuracy where
    # ell itself is nearly affine.

    def _log1p_terms(self, u: np.ndarray, h: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """(increments of -log1pexp(u), increments of -log1pexp(-u))"""
        return -np.log1p(expit(u) * np.expm1(h)), -np.log1p(expit(-u) * np.expm1(-h))

    def ell_bounded_increments(self, nodes: ArrayLike) -> np.ndarray:
        """Increments of ell - u"""
        nodes = np.asarray(nodes, dtype=float)
        u, h = nodes[:-1], np.diff(nodes)
        up, _ = self._log1p_terms(u, h)
        if self.kind is DivisorKind.ONE_POINT:
            return up
        if self.kind is DivisorKind.TWO_POINT:
            return 2.0 * up
        return -h

    def ell_bounded_prime(self, u: ArrayLike) -> ArrayLike:
        """(ell - u)'"""
        u = np.asarray(u, dtype=float)
        if self.kind is DivisorKind.ONE_POINT:
            return -expit(u)
        if self.kind is DivisorKind.TWO_POINT:
            return -2.0 * expit(u)
        return -np.ones_like(u)

    def ell_increments(self, nodes: ArrayLike) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=float)
        u, h = nodes[:-1], np.diff(nodes)
        up, down = self._log1p_terms(u, h)
        if self.kind is DivisorKind.ONE_POINT:
            return down
        if self.kind is DivisorKind.TWO_POINT:
            return up + down
        return np.zeros_like(h)

    def psi_increments(self, nodes: ArrayLike, gamma: float) -> np.ndarray:
        """Increments of the reference potential, from ell and its increments"""
        nodes = np.asarray(nodes, dtype=float)
        if not self.has_divisor:
            return np.zeros(nodes.size - 1)
        ell = self.ell(nodes[:-1])
        d_ell = self.ell_increments(nodes)
        if gamma > 0:
            ratio = np.exp(gamma * ell) * np.expm1(gamma * d_ell) / np.expm1(gamma * ell)
            return -2.0 * np.log1p(ratio)
        return -2.0 * np.log1p(d_ell / ell)


def psi_gamma_of_ell(gamma: float, ell: ArrayLike) -> ArrayLike:
    with np.errstate(divide="ignore"):
        return -2.0 * np.log(-np.expm1(gamma * np.asarray(ell, dtype=float)) / gamma)


def psi_cusp_of_ell(ell: ArrayLike) -> ArrayLike:
    return -2.0 * np.log(-np.asarray(ell, dtype=float))


def _psi_ell_derivatives(gamma: float, ell: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    """First and second derivatives of the potential with respect to ell"""
    ell = np.asarray(ell, dtype=float)
    if gamma > 0:
        one_minus_x = -np.expm1(gamma * ell)
        x = 1.0 - one_minus_x
        d1 = 2.0 * gamma * x / one_minus_x
        d2 = 2.0 * gamma * gamma * x / (one_minus_x * one_minus_x)
        return d1, d2
    return -2.0 / ell, 2.0 / (ell * ell)


def psi_gamma(gamma: float, r: ArrayLike) -> ArrayLike:
    """
    Conical potential -2 log((1 - r^gamma)/gamma).

    Args:
        gamma: cone angle parameter, gamma > 0
        r: section norm squared, 0 <= r < 1

    Raises:
        DomainError: gamma <= 0 or r outside [0, 1)
    """
    gamma_arr = np.asarray(gamma, dtype=float)
    r = np.asarray(r, dtype=float)
    if np.any(gamma_arr <= 0):
        raise DomainError("psi_gamma requires gamma > 0", gamma=float(np.min(gamma_arr)))
    if np.any(r >= 1) or np.any(r < 0) or np.any(np.isnan(r)):
        raise DomainError("psi_gamma requires 0 <= r < 1")
    with np.errstate(divide="ignore"):
        ell = np.log(r)
    return psi_gamma_of_ell(gamma_arr, ell)


def psi_cusp(r: ArrayLike) -> ArrayLike:
    """Cusp potential -log(log^2 r) for 0 < r < 1"""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0) or np.any(r >= 1) or np.any(np.isnan(r)):
        raise DomainError("psi_cusp requires 0 < r < 1")
    return psi_cusp_of_ell(np.log(r))


def tmax(geom: ModelGeometry, gamma: float) -> float:
    """First time the evolving class stops being positive"""
    c = geom.divisor.twist_c
    if geom.kind is DivisorKind.ONE_POINT:
        rate = c - 1.0 - gamma
    elif geom.kind is DivisorKind.TWO_POINT:
        rate = c - 2.0 * gamma
    else:
        return math.inf
    if rate < 0:
        return 1.0 / (-rate)
    return math.inf


def check_horizon(geom: ModelGeometry, gamma: float, horizon_T: float) -> None:
    limit = tmax(geom, gamma)
    if not horizon_T < limit:
        raise HorizonError(
            "horizon_T must stay below the class-condition time tmax "
            f"(horizon_T={horizon_T}, tmax={limit})",
            horizon_T=horizon_T,
            tmax=limit,
        )


def background_density(
    geom: ModelGeometry, params: ConeParams, t: float, u: ArrayLike
) -> ArrayLike:
    """Density of omega + t nu_gamma"""
    if t < 0 or t > params.horizon_T:
        raise HorizonError(
            f"t={t} outside [0, horizon_T={params.horizon_T}]", t=t
        )
    density = geom.g(u) + t * geom.nu_gamma_density(u, params.gamma)
    if np.any(np.asarray(density) <= 0):
        raise PositivityError(
            "background density is not positive; class condition violated",
            nodes=np.flatnonzero(np.atleast_1d(density) <= 0),
        )
    return density


def model_metric_density(geom: ModelGeometry, params: ConeParams, u: ArrayLike) -> ArrayLike:
    """
    Density of omega + i dd^c psi_gamma, with psi_gamma'' from the
    closed-form chain rule in the variable log r.
    """
    if params.gamma <= 0:
        raise DomainError("model metric requires gamma > 0; use cusp_metric_density")
    density = geom.g(u) + geom.psi_second(u, params.gamma)
    _require_positive(density, "model metric density")
    return density


def model_metric_density_fd(
    geom: ModelGeometry, params: ConeParams, u: ArrayLike, step: float = 1e-4
) -> ArrayLike:
    """Finite-difference cross-check of model_metric_density (4th order central)"""
    if params.gamma <= 0:
        raise DomainError("model metric requires gamma > 0")
    u = np.asarray(u, dtype=float)
    psi = lambda x: geom.psi(x, params.gamma)  # noqa: E731
    second = (
        -psi(u + 2 * step)
        + 16 * psi(u + step)
        - 30 * psi(u)
        + 16 * psi(u - step)
        - psi(u - 2 * step)
    ) / (12 * step * step)
    return geom.g(u) + second


def cusp_metric_density(geom: ModelGeometry, u: ArrayLike) -> ArrayLike:
    density = geom.g(u) + geom.psi_second(u, 0.0)
    _require_positive(density, "cusp metric density")
    return density


def model_ratio_defect(geom: ModelGeometry, params: ConeParams, u: ArrayLike) -> ArrayLike:
    """log(w_gamma/g) + (1-gamma) ell - psi_gamma"""
    if params.gamma <= 0:
        raise DomainError("model ratio defect requires gamma > 0")
    if not geom.has_divisor:
        raise DomainError("model ratio defect requires a divisor")
    ell = geom.ell(u)
    if np.any(np.exp(ell) == 0.0) or np.any(~np.isfinite(ell)):
        raise DomainError("section norm vanishes on the evaluation set")
    w = model_metric_density(geom, params, u)
    return np.log(w / geom.g(u)) + (1.0 - params.gamma) * ell - psi_gamma_of_ell(
        params.gamma, ell
    )


def curvature_density(
    metric_density: Callable[[np.ndarray], np.ndarray],
    u: ArrayLike,
    step: float = 1e-3,
    domain: Optional[Tuple[float, float]] = None,
) -> ArrayLike:
    """
    Gauss curvature -(log w)''/w of the metric w(u) beta.

    The second derivative uses the 5-point stencil of width 4*step; with
    a domain given, stencils reaching outside it are rejected.
    """
    u = np.asarray(u, dtype=float)
    if domain is not None:
        lo, hi = domain
        if np.any(u - 2 * step < lo) or np.any(u + 2 * step > hi):
            raise DomainError("curvature stencil leaves the domain", domain=list(domain))
    samples = [np.asarray(metric_density(u + k * step), dtype=float) for k in (-2, -1, 0, 1, 2)]
    for s in samples:
        _require_positive(s, "metric density near the curvature stencil")
    logs = [np.log(s) for s in samples]
    second = (-logs[0] + 16 * logs[1] - 30 * logs[2] + 16 * logs[3] - logs[4]) / (
        12 * step * step
    )
    return -second / samples[2]


def _require_positive(density: ArrayLike, what: str) -> None:
    bad = np.flatnonzero(np.atleast_1d(density) <= 0)
    if bad.size:
        raise PositivityError(f"{what} is not positive", nodes=bad)
