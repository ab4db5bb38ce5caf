"""
Damped Newton solver for the radial log-density equation

    G(v) = v - a * log((base + D2 v) / g) - b = 0

shared by the implicit time step (a = dt) and the auxiliary elliptic
problem (a = 1/k).

The unknowns are the anchor v_0 and the cell slopes q_i = (v_(i+1) - v_i)/h_i,
so the density base + c_i (q_i - q_(i-1)) never differences nodal values.
Newton works on G_0 = 0 together with the differenced rows
G_(i+1) - G_i = 0; their Jacobian in q is symmetric tridiagonal with
diagonal h_i + a c_i/m_i + a c_(i+1)/m_(i+1), and each linear solve goes
through scipy's banded Cholesky.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from conelab.errors import ConvergenceError, PositivityError
from conelab.mesh import Mesh, flux_difference

logger = logging.getLogger(__name__)

MIN_STEP_FRACTION = 2.0**-30
ARMIJO = 1e-4


@dataclass(frozen=True)
class NewtonResult:
    solution: np.ndarray
    density: np.ndarray
    iterations: int
    residual: float
    slopes: Optional[np.ndarray] = None


def symmetric_tridiagonal_solve(diag: np.ndarray, off: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve an SPD tridiagonal system; off[i] couples unknowns i and i+1"""
    ab = np.zeros((2, diag.size))
    ab[0, 1:] = off
    ab[1] = diag
    return scipy.linalg.solveh_banded(ab, rhs, check_finite=False)


def _nodal(anchor: float, h: np.ndarray, q: np.ndarray) -> np.ndarray:
    v = np.empty(q.size + 1)
    v[0] = anchor
    v[1:] = anchor + np.cumsum(h * q)
    return v


class _System:
    """Residuals of the anchored flux form for fixed (base, g, a, b)"""

    def __init__(self, mesh: Mesh, base, g, a, b, b_increments):
        self.mesh = mesh
        self.h = mesh.spacing
        self.base = base
        self.log_g = np.log(g)
        self.a = a
        self.b0 = float(b[0])
        self.db = np.diff(b) if b_increments is None else np.asarray(b_increments, dtype=float)

    def density(self, q: np.ndarray) -> np.ndarray:
        return self.base + flux_difference(self.mesh, q)

    def residual(self, anchor: float, q: np.ndarray, density: np.ndarray) -> np.ndarray:
        """Nodal G rebuilt from G_0 and the differenced rows"""
        log_ratio = self.a * (np.log(density) - self.log_g)
        rows = self.h * q - np.diff(log_ratio) - self.db
        out = np.empty(density.size)
        out[0] = anchor - log_ratio[0] - self.b0
        out[1:] = out[0] + np.cumsum(rows)
        return out


def solve_log_density(
    mesh: Mesh,
    base: np.ndarray,
    g: np.ndarray,
    a: float,
    b: np.ndarray,
    v0: np.ndarray,
    tol: float,
    max_iter: int,
    floor: float,
    label: str = "newton",
    slopes0: Optional[np.ndarray] = None,
    b_increments: Optional[np.ndarray] = None,
) -> NewtonResult:
    """
    Solve G(v) = 0 starting from v0.

    slopes0 and b_increments, when given, replace the cell slopes of v0
    and the increments of b. A starting point whose density is not above
    the floor is replaced by its mean, whose density equals `base`.

    Raises:
        PositivityError: base itself is not above the floor
        ConvergenceError: no convergence within max_iter, line search
            stalls, or the steps vanish with the residual still above tol
    """
    bad = np.flatnonzero(base <= floor)
    if bad.size:
        raise PositivityError(f"{label}: reference density at or below the floor", nodes=bad)

    system = _System(mesh, base, g, a, b, b_increments)
    h = system.h
    c = mesh.flux_coefficients
    v0 = np.asarray(v0, dtype=float)
    anchor = float(v0[0])
    q = np.diff(v0) / h if slopes0 is None else np.array(slopes0, dtype=float)
    density = system.density(q)
    if np.any(density <= floor):
        anchor = float(np.mean(v0))
        q = np.zeros(mesh.n - 1)
        density = system.density(q)

    residual = system.residual(anchor, q, density)
    res_norm = float(np.max(np.abs(residual)))
    for iteration in range(1, max_iter + 1):
        if res_norm <= tol:
            return NewtonResult(_nodal(anchor, h, q), density, iteration - 1, res_norm, q)

        k = a * c / density
        rows = np.diff(residual)
        dq = symmetric_tridiagonal_solve(h + k[:-1] + k[1:], -k[1:-1], -rows)
        d_anchor = -residual[0] + k[0] * dq[0]
        step_norm = float(np.max(np.abs(_nodal(d_anchor, h, dq))))

        fraction = 1.0
        accepted: Optional[tuple] = None
        while fraction >= MIN_STEP_FRACTION:
            trial_q = q + fraction * dq
            trial_density = system.density(trial_q)
            if np.all(trial_density > floor):
                trial_anchor = anchor + fraction * d_anchor
                trial_residual = system.residual(trial_anchor, trial_q, trial_density)
                trial_norm = float(np.max(np.abs(trial_residual)))
                if trial_norm <= (1.0 - ARMIJO * fraction) * res_norm or fraction * step_norm <= tol:
                    accepted = (trial_anchor, trial_q, trial_density, trial_residual, trial_norm)
                    break
            fraction *= 0.5

        if accepted is None:
            raise ConvergenceError(
                f"{label}: line search stalled",
                iterations=iteration,
                residual=res_norm,
            )
        anchor, q, density, residual, res_norm = accepted

        if res_norm <= tol:
            return NewtonResult(_nodal(anchor, h, q), density, iteration, res_norm, q)
        if fraction * step_norm <= tol * (1.0 + float(np.max(np.abs(_nodal(anchor, h, q))))):
            raise ConvergenceError(
                f"{label}: steps vanished with the residual above tolerance",
                iterations=iteration,
                residual=res_norm,
            )

    raise ConvergenceError(
        f"{label}: no convergence after {max_iter} iterations",
        iterations=max_iter,
        residual=res_norm,
    )
