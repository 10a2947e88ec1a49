"""External potentials V(r) and their radial data.

Each family evaluates ``V(r)`` and the radial tilt ``<grad V(x), x> = r V'(r)``
and knows the limit of ``(1 - V(r)) r^2`` at infinity, which decides the
sufficient existence condition.
"""

from __future__ import annotations

import csv
import math
from fractions import Fraction
from dataclasses import dataclass, field
from pathlib import Path
from typing import Union

import numpy as np
from scipy.interpolate import PchipInterpolator

from .grid import Field, ProblemParams, RadialGrid


class PotentialError(ValueError):
    pass


@dataclass(frozen=True)
class Constant:
    c: float = 1.0

    def value(self, r):
        return np.full_like(np.asarray(r, dtype=float), self.c)

    def tilt(self, r):
        return np.zeros_like(np.asarray(r, dtype=float))


@dataclass(frozen=True)
class Model:
    """``V(r) = 1 - mu / (1 + r^2)``."""

    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise PotentialError(f"Model potential needs mu > 0, got {self.mu!r}")

    def value(self, r):
        r = np.asarray(r, dtype=float)
        return 1.0 - self.mu / (1.0 + r * r)

    def tilt(self, r):
        r2 = np.asarray(r, dtype=float) ** 2
        return 2.0 * self.mu * r2 / (1.0 + r2) ** 2


@dataclass(frozen=True)
class Null:
    """``V(r) = 1 + N (2 r^2 - N lam^2) / (r^2 + lam^2)^2``.

    The HLS profile of scale ``lam`` (suitably scaled) solves the equation
    with this potential.
    """

    lam: float
    N: int

    def __post_init__(self):
        if not self.lam > 0:
            raise PotentialError(f"Null potential needs lambda > 0, got {self.lam!r}")

    def value(self, r):
        r2 = np.asarray(r, dtype=float) ** 2
        l2 = self.lam**2
        return 1.0 + self.N * (2 * r2 - self.N * l2) / (r2 + l2) ** 2

    def tilt(self, r):
        # r d/dr of N (2 r^2 - N l^2) (r^2 + l^2)^-2
        r2 = np.asarray(r, dtype=float) ** 2
        l2 = self.lam**2
        N = self.N
        return N * (4 * r2 * (r2 + l2) - 4 * r2 * (2 * r2 - N * l2)) / (r2 + l2) ** 3


@dataclass(frozen=True)
class Tabulated:
    """Samples ``(r, V(r))`` joined by a monotone cubic (PCHIP) interpolant."""

    r: tuple
    v: tuple
    _interp: PchipInterpolator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.r, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if r.ndim != 1 or r.shape != v.shape or len(r) < 2:
            raise PotentialError("tabulated potential needs two equal-length columns with >= 2 rows")
        if np.any(np.diff(r) <= 0):
            raise PotentialError("tabulated radii must be strictly increasing")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(v))):
            raise PotentialError("tabulated potential must be finite (V in L^infinity)")
        object.__setattr__(self, "_interp", PchipInterpolator(r, v, extrapolate=False))

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "Tabulated":
        """Read a two-column ``r,V`` CSV; a non-numeric first row is taken as header."""
        rows = []
        with open(path, newline="") as fh:
            for k, row in enumerate(csv.reader(fh)):
                if not row or all(not c.strip() for c in row):
                    continue
                if len(row) < 2:
                    raise PotentialError(f"{path}: line {k + 1} has fewer than two columns")
                try:
                    rows.append((float(row[0]), float(row[1])))
                except ValueError:
                    if k == 0:
                        continue
                    raise PotentialError(f"{path}: line {k + 1} is not numeric") from None
        if not rows:
            raise PotentialError(f"{path}: no samples")
        r, v = zip(*rows)
        return cls(tuple(r), tuple(v))

    def _check_range(self, r):
        r = np.asarray(r, dtype=float)
        if r.min() < self.r[0] or r.max() > self.r[-1]:
            raise PotentialError(
                f"tabulated range [{self.r[0]}, {self.r[-1]}] does not cover [{r.min()}, {r.max()}]"
            )
        return r

    def value(self, r):
        return self._interp(self._check_range(r))

    def tilt(self, r):
        r = self._check_range(r)
        return r * self._interp.derivative()(r)


Potential = Union[Constant, Model, Null, Tabulated]


def eval_potential(V: Potential, grid: RadialGrid) -> Field:
    vals = V.value(grid.nodes)
    if isinstance(V, Tabulated) and not np.all(np.isfinite(vals)):
        raise PotentialError("tabulated potential is not finite on the grid")
    return Field(grid, np.asarray(vals, dtype=float))


def radial_tilt(V: Potential, grid: RadialGrid) -> Field:
    """``<grad V(x), x> = r V'(r)`` at the grid nodes."""
    return Field(grid, np.asarray(V.tilt(grid.nodes), dtype=float))


@dataclass(frozen=True)
class TailEstimate:
    value: float
    estimated: bool


def tail_coefficient(V: Potential, min_samples: int = 10) -> TailEstimate:
    """Limit of ``(1 - V(r)) r^2`` as ``r -> infinity``.

    Exact for the closed-form families.  For tabulated data the liminf over
    the last decade of radii is returned with ``estimated=True``.
    """
    if isinstance(V, Constant):
        return TailEstimate(0.0 if V.c == 1.0 else math.copysign(math.inf, 1.0 - V.c), False)
    if isinstance(V, Model):
        return TailEstimate(V.mu, False)
    if isinstance(V, Null):
        return TailEstimate(-2.0 * V.N, False)
    r = np.asarray(V.r)
    v = np.asarray(V.v)
    tail = r >= r[-1] / 10
    if tail.sum() < min_samples:
        raise PotentialError(f"need at least {min_samples} samples in the last decade, got {int(tail.sum())}")
    return TailEstimate(float(np.min((1.0 - v[tail]) * r[tail] ** 2)), True)


@dataclass(frozen=True)
class Thresholds:
    sufficient: float
    nonexist: float


def thresholds_exact(N: int) -> tuple[Fraction, Fraction]:
    """``(N^2 (N-2)_+ / (4(N+1)), (N-2)^2 / 4)`` as exact rationals."""
    if int(N) != N or N < 1:
        raise PotentialError("dimension must be a positive integer")
    N = int(N)
    return Fraction(N * N * max(N - 2, 0), 4 * (N + 1)), Fraction((N - 2) ** 2, 4)


def thresholds(params: Union[ProblemParams, int]) -> Thresholds:
    """Model-family thresholds: a groundstate exists for ``mu`` above ``sufficient``;
    for N >= 3 no nonzero solution exists below ``nonexist``.

    Their ratio is ``(N-2)(N+1)/N^2 = 1 - (N+2)/N^2`` for N >= 3.
    """
    N = params.N if isinstance(params, ProblemParams) else params
    suff, non = thresholds_exact(N)
    return Thresholds(float(suff), float(non))
