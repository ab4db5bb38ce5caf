"""
Graded 1-D grid in u = log|z|^2.

The divisor sits at u = -inf; the grid truncates at u_min and the bounded
unknown gets a zero-slope (ghost reflection) condition at both ends.
Second differences are formed from cell increments, never from nodal
values directly, so that curvatures far below the size of the values
survive on very fine cells.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property

import numpy as np

from conelab.errors import MeshError


class BoundaryPolicy(str, Enum):
    NEUMANN_BOTH_ENDS = "neumann_both_ends"


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable grid with trapezoid quadrature and a 3-point second difference"""

    nodes: np.ndarray
    boundary_policy: BoundaryPolicy = field(default=BoundaryPolicy.NEUMANN_BOTH_ENDS)

    def __post_init__(self):
        nodes = np.array(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 8:
            raise MeshError("mesh needs at least 8 nodes", n=int(nodes.size))
        if not np.all(np.isfinite(nodes)) or np.any(np.diff(nodes) <= 0):
            raise MeshError("mesh nodes must be finite and strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def n(self) -> int:
        return int(self.nodes.size)

    @property
    def u_min(self) -> float:
        return float(self.nodes[0])

    @property
    def u_max(self) -> float:
        return float(self.nodes[-1])

    @cached_property
    def spacing(self) -> np.ndarray:
        h = np.diff(self.nodes)
        h.setflags(write=False)
        return h

    @cached_property
    def quad_weights(self) -> np.ndarray:
        h = self.spacing
        w = np.empty(self.n)
        w[0] = h[0] / 2
        w[-1] = h[-1] / 2
        w[1:-1] = (h[:-1] + h[1:]) / 2
        w.setflags(write=False)
        return w

    @cached_property
    def flux_coefficients(self) -> np.ndarray:
        """
        Row weights c: the second difference at node i is c_i (q_i - q_(i-1))
        for cell slopes q, with the ghost slopes q_(-1), q_(n-1) at the ends.
        """
        h = self.spacing
        c = np.empty(self.n)
        c[0] = 2.0 / h[0]
        c[-1] = 2.0 / h[-1]
        c[1:-1] = 2.0 / (h[:-1] + h[1:])
        c.setflags(write=False)
        return c

    def window_mask(self, lo: float, hi: float) -> np.ndarray:
        return (self.nodes >= lo) & (self.nodes <= hi)


def build_mesh(u_min: float, u_max: float, n: int, grading: float = 1.0) -> Mesh:
    """
    Build a grid on [u_min, u_max] with n nodes.

    Cells grow geometrically by `grading` away from u_min, so the finest
    cell is next to the divisor end; grading = 1 gives a uniform grid.
    """
    if not (math.isfinite(u_min) and math.isfinite(u_max)) or not u_min < u_max:
        raise MeshError("mesh bounds must satisfy u_min < u_max", u_min=u_min, u_max=u_max)
    if int(n) != n or n < 8:
        raise MeshError("mesh needs an integer node count n >= 8", n=n)
    if not grading >= 1.0:
        raise MeshError("grading must be >= 1", grading=grading)
    n = int(n)
    if grading == 1.0:
        return Mesh(np.linspace(u_min, u_max, n))

    length = u_max - u_min
    cells = n - 1
    h0 = length * (grading - 1.0) / (grading**cells - 1.0)
    widths = h0 * grading ** np.arange(cells)
    nodes = np.empty(n)
    nodes[0] = u_min
    nodes[1:] = u_min + np.cumsum(widths)
    nodes[-1] = u_max
    return Mesh(nodes)


def anchored_uniform_mesh(u_min: float, u_max: float, spacing: float) -> Mesh:
    """
    Uniform grid with the given spacing, anchored at u_max.

    Grids built with the same u_max and spacing share their common nodes
    bit-for-bit, whatever the lower bound.
    """
    if spacing <= 0:
        raise MeshError("spacing must be positive", spacing=spacing)
    cells = int(round((u_max - u_min) / spacing))
    if cells < 7:
        raise MeshError("domain too short for the requested spacing", u_min=u_min)
    nodes = u_max - spacing * np.arange(cells, -1, -1, dtype=float)
    return Mesh(nodes)


def _check_length(mesh: Mesh, values: np.ndarray, size: int = 0) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    expected = size or mesh.n
    if values.shape != (expected,):
        raise MeshError(
            "field length does not match the mesh",
            expected=expected,
            got=list(values.shape),
        )
    return values


def flux_difference(
    mesh: Mesh, slopes: np.ndarray, left_slope: float = 0.0, right_slope: float = 0.0
) -> np.ndarray:
    """c_i (q_i - q_(i-1)) for cell slopes q and the given ghost slopes"""
    q = _check_length(mesh, slopes, mesh.n - 1)
    c = mesh.flux_coefficients
    out = np.empty(mesh.n)
    out[0] = c[0] * (q[0] - left_slope)
    out[1:-1] = c[1:-1] * np.diff(q)
    out[-1] = c[-1] * (right_slope - q[-1])
    return out


def curvature_from_increments(
    mesh: Mesh, increments: np.ndarray, left_slope: float = 0.0, right_slope: float = 0.0
) -> np.ndarray:
    """
    Second difference of a field given by its cell increments.

    The ghost value at each end sits at the given slope; zero slopes are
    the plain reflection.
    """
    increments = _check_length(mesh, increments, mesh.n - 1)
    return flux_difference(mesh, increments / mesh.spacing, left_slope, right_slope)


def second_difference(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """
    Non-uniform 3-point second difference with ghost reflection at both ends.

    The trapezoid-weighted sum of the output telescopes to zero.
    """
    return curvature_from_increments(mesh, np.diff(_check_length(mesh, values)))


def integrate(mesh: Mesh, values: np.ndarray) -> float:
    return float(np.dot(mesh.quad_weights, _check_length(mesh, values)))
