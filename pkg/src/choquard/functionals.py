"""Energies, the nonlocal constraint, their gradients and the integral identities.

Discrete conventions: the kinetic energy is the face-difference Dirichlet form
of :mod:`choquard.grid`, the potential energy is a midpoint sum and the
nonlocal term uses the Galerkin Riesz matrix.  Gradients are taken in the
quadrature inner product ``<f, g> = sum(w f g)`` and are exact derivatives of
the discrete functionals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate as spi
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from scipy.linalg import cho_solve_banded, cholesky_banded

from .grid import (
    Field,
    GridError,
    ProblemParams,
    RadialGrid,
    dirichlet_form,
    integrate,
    sphere_area,
    stiffness_bands,
    stiffness_matvec,
    values_on,
)
from .potentials import Model, Potential, Tabulated, eval_potential, radial_tilt
from .riesz import RieszOperator, constraint_D, profile_convolution_constant

RESIDUAL_FLOOR = 1e-14


class FunctionalError(ValueError):
    pass


def _quad_halfline(f, breaks=(1.0,), epsrel=1e-13, accept=1e-8):
    """``int_0^inf f(r) dr`` split at ``breaks``; ``accept`` bounds the relative error estimate."""
    pts = [0.0] + sorted(b for b in breaks if b > 0) + [math.inf]
    total = 0.0
    for lo, hi in zip(pts[:-1], pts[1:]):
        val, err = spi.quad(f, lo, hi, epsabs=0.0, epsrel=epsrel, limit=400)
        if not np.isfinite(val) or err > accept * max(abs(val), 1e-300) + 1e-300:
            raise FunctionalError(f"quadrature did not converge on [{lo}, {hi}] (err {err:.2e})")
        total += val
    return total


def profile_mass_integral(N: int, lam: float = 1.0) -> float:
    """``int (lam / (lam^2 + |x|^2))^N dx``, independent of ``lam``."""
    S = sphere_area(N)
    return S * _quad_halfline(lambda r: r ** (N - 1) * (lam / (lam * lam + r * r)) ** N, (lam,))


@dataclass(frozen=True)
class HlsProfile:
    """``u(r) = C (lam / (lam^2 + r^2))^(N/2)``, centred at the origin."""

    C: float
    lam: float
    N: int

    def __post_init__(self):
        if not (self.C > 0 and self.lam > 0):
            raise FunctionalError("HLS profile needs C > 0 and lambda > 0")

    @classmethod
    def normalized(cls, params: ProblemParams, lam: float = 1.0) -> "HlsProfile":
        """Amplitude chosen so that the exact nonlocal term equals one.

        With ``I_alpha * |u|^p = C^p A' lam^((N-a)/2) (lam^2 + r^2)^(-(N-a)/2)``
        the constraint reads ``C^(2p) A' J = 1`` with ``J`` the mass integral.
        """
        A1 = profile_convolution_constant(params)
        J = profile_mass_integral(params.N, lam)
        return cls((A1 * J) ** (-1.0 / (2 * params.p)), float(lam), params.N)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.C * (self.lam / (self.lam**2 + r * r)) ** (self.N / 2)

    def derivative(self, r):
        r = np.asarray(r, dtype=float)
        return -self.N * r / (self.lam**2 + r * r) * self(r)

    def field(self, grid: RadialGrid) -> Field:
        return grid.field(self(grid.nodes))

    def mass(self) -> float:
        return self.C**2 * profile_mass_integral(self.N, self.lam)

    def kinetic(self) -> float:
        S = sphere_area(self.N)
        return S * _quad_halfline(lambda r: r ** (self.N - 1) * self.derivative(r) ** 2, (self.lam,))


@dataclass(frozen=True)
class IdentityReport:
    nehari_residual: float
    pohozaev_residual: float
    pohozaev_reduced_residual: float
    # grad V = 0: the reduced identity can only hold for u = 0
    degenerate_tilt: bool = False
    rescaled: bool = True

    def max_residual(self) -> float:
        return max(self.nehari_residual, self.pohozaev_residual)


def kinetic_energy(grid: RadialGrid, u) -> float:
    return dirichlet_form(grid, u)


def energy_Q(grid: RadialGrid, V: Potential, u) -> float:
    """``int |grad u|^2 + V |u|^2`` on the grid."""
    vals = values_on(grid, u)
    Vv = eval_potential(V, grid).values
    return dirichlet_form(grid, vals) + float(np.dot(grid.weights, Vv * vals * vals))


def critical_quotient(grid: RadialGrid, V: Potential, op: RieszOperator, u) -> float:
    """``Q(u) / D(u)^(N/(N+alpha))``, invariant under ``u -> t u``."""
    D = constraint_D(op, u)
    if D <= 0:
        raise FunctionalError("nonlocal term vanishes; quotient undefined")
    return energy_Q(grid, V, u) / D ** (1.0 / op.params.p)


def grad_Q(grid: RadialGrid, V: Potential, u) -> Field:
    vals = values_on(grid, u)
    Vv = eval_potential(V, grid).values
    return Field(grid, 2.0 * (stiffness_matvec(grid, vals) / grid.weights + Vv * vals))


def _signed_power(u, q):
    """``|u|^q sign(u)``, which is ``|u|^(q-1) u`` extended by 0 at u = 0."""
    return np.sign(u) * np.abs(u) ** q


def nonlocal_force(op: RieszOperator, u) -> np.ndarray:
    """``(I_alpha * |u|^p) |u|^(p-2) u``."""
    vals = values_on(op.grid, u)
    p = op.params.p
    return op.K @ np.abs(vals) ** p * _signed_power(vals, p - 1)


def grad_D(grid: RadialGrid, op: RieszOperator, u) -> Field:
    if op.grid.key != grid.key:
        raise GridError("Riesz operator built on a different grid")
    return Field(grid, 2.0 * op.params.p * nonlocal_force(op, u))


def directional_check(grid, V, op, u, v, eps=1e-5) -> tuple[float, float]:
    """Relative mismatch of central differences of Q and D against ``<grad, v>``."""
    u = values_on(grid, u)
    v = values_on(grid, v)
    out = []
    for F, G in ((lambda x: energy_Q(grid, V, x), grad_Q(grid, V, u)),
                 (lambda x: constraint_D(op, x), grad_D(grid, op, u))):
        fd = (F(u + eps * v) - F(u - eps * v)) / (2 * eps)
        an = integrate(grid, G.values * v)
        out.append(abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return out[0], out[1]


def _rel(lhs: float, rhs: float, floor: float) -> float:
    return abs(lhs - rhs) / (abs(lhs) + abs(rhs) + floor)


def identity_report(grid: RadialGrid, V: Potential, op: RieszOperator, u) -> IdentityReport:
    """Nehari, Pohozaev and reduced Pohozaev residuals for a solution of the equation.

    ``u`` must already carry the Euler-Lagrange normalisation (no multiplier).
    """
    vals = values_on(grid, u)
    N = grid.N
    T = dirichlet_form(grid, vals)
    u2 = grid.weights * vals * vals
    PV = float(np.dot(eval_potential(V, grid).values, u2))
    tilt = radial_tilt(V, grid).values
    PT = float(np.dot(tilt, u2))
    D = constraint_D(op, vals)
    floor = RESIDUAL_FLOOR * max(float(u2.sum()), 1.0)
    if max(abs(T), abs(PV), abs(D)) < floor:
        raise FunctionalError("degenerate field: every identity term is below the residual floor")
    return IdentityReport(
        nehari_residual=_rel(T + PV, D, floor),
        pohozaev_residual=_rel(0.5 * (N - 2) * T + 0.5 * N * PV + 0.5 * PT, 0.5 * N * D, floor),
        pohozaev_reduced_residual=_rel(T, 0.5 * PT, floor),
        degenerate_tilt=bool(np.all(tilt == 0.0)),
    )


def hardy_ratio_constant(N: int) -> float:
    """``N^2 (N-2)_+ / (4 (N+1))``."""
    return N * N * max(N - 2, 0) / (4.0 * (N + 1))


def c_infty_reference(params: ProblemParams, lam: float = 1.0) -> float:
    """Sharp HLS level: the mass of the HLS profile normalised to unit constraint."""
    prof = HlsProfile.normalized(params, lam)
    c = prof.mass()
    if not (np.isfinite(c) and c > 0):
        raise FunctionalError("c_infinity oracle failed")
    return c


def _one_minus_V_scaled(V: Potential, lam: float):
    """``y -> lam^2 (1 - V(lam y))``, with a ``1/r^2`` tail beyond tabulated data."""
    if isinstance(V, Model):
        return lambda y: V.mu * lam * lam / (1.0 + (lam * y) ** 2)
    if isinstance(V, Tabulated):
        r_last, v_last = V.r[-1], V.v[-1]

        def f(y):
            r = lam * y
            if r < V.r[0]:
                r = V.r[0]
            if r > r_last:
                return lam * lam * (1.0 - v_last) * r_last**2 / (r * r)
            return lam * lam * (1.0 - float(V.value(r)))

        return f
    return lambda y: lam * lam * (1.0 - float(V.value(lam * y)))


def i_v_functional(V: Potential, params: ProblemParams, lam: float) -> float:
    """Test-function functional ``I_V(0, lam)`` on the normalised HLS family.

    ``I_V = lam^2 int |grad u_lam|^2 + lam^2 int (V - 1) |u_lam|^2`` with
    ``u_lam(x) = lam^(-N/2) u_1(x/lam)``.  For N >= 3 the kinetic part is written
    through the gradient/Hardy identity, which keeps the integrand in one piece.
    """
    if not lam > 0:
        raise FunctionalError("lambda must be positive")
    N = params.N
    prof = HlsProfile.normalized(params, 1.0)
    C2 = prof.C**2
    S = sphere_area(N)
    w = _one_minus_V_scaled(V, lam)
    breaks = (1.0 / lam, 1.0) if lam != 1 else (1.0,)
    # interpolated tables are only piecewise smooth and accurate to a few digits
    q = dict(epsrel=1e-11, accept=1e-6 if isinstance(V, Tabulated) else 1e-8)
    if N >= 3:
        kappa = hardy_ratio_constant(N)
        f = lambda y: (kappa / (y * y) - w(y)) * C2 * y ** (N - 1) / (1 + y * y) ** N
        return S * _quad_halfline(f, breaks, **q)
    kin = prof.kinetic()
    pot = S * _quad_halfline(lambda y: w(y) * C2 * y ** (N - 1) / (1 + y * y) ** N, breaks, **q)
    return kin - pot


def gradient_hardy_ratio(params: ProblemParams, lam: float) -> float:
    """``int |grad u_lam|^2 / int |u_lam|^2 / |x|^2`` by 1-D quadrature (N >= 3)."""
    N = params.N
    if N < 3:
        raise FunctionalError("(N-2)_+ = 0 case: the Hardy integral diverges for N <= 2")
    prof = HlsProfile(1.0, lam, N)
    num = _quad_halfline(lambda r: r ** (N - 1) * prof.derivative(r) ** 2, (lam,))
    den = _quad_halfline(lambda r: r ** (N - 3) * prof(r) ** 2, (lam,))
    return num / den


def quadrature_identity_error(N: int) -> float:
    """Relative error of ``int |x|^2 (1+|x|^2)^-(N+2) = (N-2)/(4(N+1)) int |x|^-2 (1+|x|^2)^-N``."""
    if N < 3:
        raise FunctionalError("identity needs N >= 3")
    lhs = _quad_halfline(lambda r: r ** (N + 1) / (1 + r * r) ** (N + 2))
    rhs = (N - 2) / (4.0 * (N + 1)) * _quad_halfline(lambda r: r ** (N - 3) / (1 + r * r) ** N)
    return abs(lhs - rhs) / abs(rhs)


def hardy_rayleigh_sup(grid: RadialGrid, weight, tol: float = 1e-10) -> float:
    """Largest ``int W phi^2 / int |grad phi|^2`` over discrete radial ``phi``.

    Lanczos on ``S L^-1 S`` with ``S = sqrt(w W)``, i.e. inverse iteration on the
    generalised pencil.  Negative parts of ``W`` are discarded.
    """
    W = np.maximum(values_on(grid, weight), 0.0)
    if not np.any(W > 0):
        return 0.0
    s = np.sqrt(grid.weights * W)
    diag, off = stiffness_bands(grid)
    ab = np.vstack([np.append(0.0, off), diag])
    cb = cholesky_banded(ab)
    op = LinearOperator((grid.n, grid.n), matvec=lambda x: s * cho_solve_banded((cb, False), s * np.ravel(x)),
                        dtype=float)
    try:
        val = eigsh(op, k=1, which="LA", tol=tol, maxiter=5000, v0=np.ones(grid.n),
                    return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise FunctionalError("Hardy eigen-iteration did not converge") from exc
    return float(val[0])


def hardy_weighted_sup(grid: RadialGrid, V: Potential, tol: float = 1e-10) -> float:
    """Discrete lower estimate of ``sup int 1/2 <grad V, x> phi^2`` over ``int |grad phi|^2 <= 1``."""
    tilt = radial_tilt(V, grid).values
    if not np.all(np.isfinite(tilt)):
        raise FunctionalError("radial tilt is not bounded on the grid")
    return hardy_rayleigh_sup(grid, 0.5 * tilt, tol)
