"""Radial grids on R^N: quadrature, finite differences and the radial Laplacian.

Radial functions u(|x|) are sampled at the centres of a graded partition of
(0, R_max].  The quadrature weights are the exact volumes of the spherical
shells, so ``sum(f * w)`` approximates the full N-dimensional integral.  The
Laplacian is the finite-volume operator whose Dirichlet form is
``sum_k c_k (u_k - u_{k-1})**2``; it has zero flux through the origin and a
homogeneous Dirichlet condition at R_max.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import gamma, pi

import numpy as np


class GridError(ValueError):
    """Invalid grid parameters or a field living on another grid."""


def sphere_area(N: int) -> float:
    """Surface measure of the unit sphere S^{N-1} in R^N (2 for N = 1)."""
    return 2.0 * pi ** (N / 2) / gamma(N / 2)


def ball_volume(N: int, R: float = 1.0) -> float:
    return pi ** (N / 2) / gamma(N / 2 + 1) * R**N


@dataclass(frozen=True)
class ProblemParams:
    """Dimension ``N`` and Riesz order ``alpha``; ``p = alpha/N + 1``."""

    N: int
    alpha: float

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise GridError(f"dimension must be a positive integer, got {self.N!r}")
        if not 0.0 < self.alpha < self.N:
            raise GridError(f"alpha must lie in (0, N) = (0, {self.N}), got {self.alpha!r}")

    @property
    def p(self) -> float:
        return self.alpha / self.N + 1.0


@dataclass(frozen=True, eq=False)
class RadialGrid:
    params: ProblemParams
    R_max: float
    n: int
    grading: float
    faces: np.ndarray = field(repr=False)
    nodes: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    # conductances of faces 1..n (the last one closes the Dirichlet condition)
    conductance: np.ndarray = field(repr=False)

    @property
    def N(self) -> int:
        return self.params.N

    @property
    def key(self) -> tuple:
        return (self.params.N, float(self.params.alpha), float(self.R_max), int(self.n), float(self.grading))

    def __len__(self) -> int:
        return self.n

    def field(self, values) -> "Field":
        """Wrap ``values`` (array or callable of r) as a :class:`Field` on this grid."""
        if callable(values):
            values = values(self.nodes)
        return Field(self, np.broadcast_to(np.asarray(values, dtype=float), self.nodes.shape).copy())

    def scaled(self, factor: float) -> "RadialGrid":
        """The same partition with every radius multiplied by ``factor``."""
        return build_grid(self.params, self.R_max * factor, self.n, self.grading)


@dataclass(frozen=True, eq=False)
class Field:
    """Samples of a radial function at the nodes of ``grid``."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.nodes.shape:
            raise GridError(f"field has {self.values.shape} values, grid has {self.grid.n} nodes")
        if not np.all(np.isfinite(self.values)):
            raise GridError("field values must be finite")

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return len(self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * _raw(other))

    __rmul__ = __mul__

    def __add__(self, other):
        return Field(self.grid, self.values + _raw(other))

    def __sub__(self, other):
        return Field(self.grid, self.values - _raw(other))

    def __neg__(self):
        return Field(self.grid, -self.values)


def _raw(x):
    return x.values if isinstance(x, Field) else x


def values_on(grid: RadialGrid, f) -> np.ndarray:
    """Node values of ``f`` after checking that it lives on ``grid``."""
    if isinstance(f, Field):
        if f.grid is not grid and f.grid.key != grid.key:
            raise GridError("field belongs to a different grid")
        return f.values
    arr = np.asarray(f, dtype=float)
    if arr.shape != grid.nodes.shape:
        raise GridError(f"expected {grid.n} node values, got shape {arr.shape}")
    return arr


def build_grid(params: ProblemParams, R_max: float, n: int, grading: float = 1.0) -> RadialGrid:
    """Cell-centred grid on (0, R_max] with faces ``R_max * (k/n)**grading``.

    ``grading = 1`` is uniform; larger values cluster nodes near the origin.
    """
    if not isinstance(params, ProblemParams):
        raise GridError("params must be a ProblemParams")
    if not R_max > 0:
        raise GridError(f"R_max must be positive, got {R_max!r}")
    if int(n) != n or n < 16:
        raise GridError(f"need at least 16 cells, got {n!r}")
    if not grading >= 1:
        raise GridError(f"grading must be >= 1, got {grading!r}")
    n = int(n)
    N = params.N
    faces = R_max * (np.arange(n + 1) / n) ** grading
    faces[-1] = R_max
    nodes = 0.5 * (faces[1:] + faces[:-1])
    S = sphere_area(N)
    weights = S * np.diff(faces**N) / N
    area = S * faces[1:] ** (N - 1)
    gaps = np.diff(np.append(nodes, R_max))
    conductance = area / gaps
    for a in (faces, nodes, weights, conductance):
        a.setflags(write=False)
    return RadialGrid(params, float(R_max), n, float(grading), faces, nodes, weights, conductance)


def integrate(grid: RadialGrid, f) -> float:
    """Approximate the integral of the radial function ``f`` over R^N."""
    return float(np.dot(values_on(grid, f), grid.weights))


def stiffness_bands(grid: RadialGrid) -> tuple[np.ndarray, np.ndarray]:
    """Diagonal and super-diagonal of the symmetric matrix L with u.L.u = Dirichlet form."""
    c = grid.conductance
    diag = c.copy()
    diag[1:] += c[:-1]
    return diag, -c[:-1]


def stiffness_matvec(grid: RadialGrid, u: np.ndarray) -> np.ndarray:
    c = grid.conductance
    flux = np.empty(grid.n + 1)
    flux[0] = 0.0
    flux[1:-1] = c[:-1] * (u[1:] - u[:-1])
    flux[-1] = -c[-1] * u[-1]
    return -(flux[1:] - flux[:-1])


def dirichlet_form(grid: RadialGrid, u, v=None) -> float:
    """Discrete ``int grad u . grad v`` over face differences (``v = u`` by default)."""
    u = values_on(grid, u)
    v = u if v is None else values_on(grid, v)
    c = grid.conductance
    du, dv = np.diff(u), np.diff(v)
    return float(np.dot(c[:-1] * du, dv) + c[-1] * u[-1] * v[-1])


def apply_neg_laplacian(grid: RadialGrid, u) -> Field:
    """Second-order approximation of ``-u'' - (N-1)/r u'``."""
    vals = values_on(grid, u)
    return Field(grid, stiffness_matvec(grid, vals) / grid.weights)


def radial_derivative(grid: RadialGrid, u) -> Field:
    """Centred three-point derivative on the (possibly graded) nodes."""
    vals = values_on(grid, u)
    return Field(grid, np.gradient(vals, grid.nodes, edge_order=2))


def half_mass_radius(grid: RadialGrid, u) -> float:
    """Smallest node radius enclosing half of ``int |u|^2``."""
    vals = values_on(grid, u)
    mass = np.cumsum(grid.weights * vals**2)
    if mass[-1] <= 0:
        return 0.0
    return float(grid.nodes[np.searchsorted(mass, 0.5 * mass[-1])])
