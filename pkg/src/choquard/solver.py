"""Constrained minimisation of Q on the manifold D(u) = 1.

Each step takes the Sobolev gradient of Q (the gradient in the inner product
``<f, g>_G = f.(L + sigma W).g``), removes its component along the Sobolev
gradient of D, moves against it and renormalises.  The step length starts from
a Barzilai-Borwein estimate and is backtracked until Q decreases enough.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.linalg import cho_solve_banded, cholesky_banded

from .functionals import (
    FunctionalError,
    HlsProfile,
    IdentityReport,
    energy_Q,
    grad_D,
    grad_Q,
    identity_report,
    nonlocal_force,
)
from .grid import (
    Field,
    ProblemParams,
    RadialGrid,
    apply_neg_laplacian,
    build_grid,
    dirichlet_form,
    half_mass_radius,
    integrate,
    stiffness_bands,
    values_on,
)
from .potentials import Null, Potential, eval_potential
from .riesz import RieszOperator, build_riesz_operator, constraint_D, profile_convolution_constant

log = logging.getLogger(__name__)

STEP_FLOOR = 1e-14


class SolverError(RuntimeError):
    pass


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    SPREADING = "Spreading"
    MAX_ITERS = "MaxIters"


@dataclass(frozen=True)
class Gaussian:
    sigma: float = 1.0


@dataclass(frozen=True)
class HlsInit:
    lam: float = 1.0


@dataclass
class SolveOptions:
    max_iters: int = 20000
    grad_tol: float = 1e-6
    step0: float = 1.0
    shrink: float = 0.5
    armijo: float = 1e-4
    max_step: float = 1e8
    # H^1 preconditioner: L + sigma * W
    precond_shift: float = 1.0
    init: Union[HlsInit, Gaussian, Field, np.ndarray] = field(default_factory=HlsInit)
    spread_fraction: float = 0.5
    spread_checks: int = 50
    spread_growth: float = 0.05
    # reduced Pohozaev residual below which a converged, once-growing run counts as localized
    spread_clear_tol: float = 1e-2
    check_every: int = 1

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError("max_iters must be a positive integer")
        for name in ("grad_tol", "step0", "armijo", "max_step", "precond_shift", "spread_fraction", "spread_growth", "spread_clear_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        if self.spread_checks < 2 or self.check_every < 1:
            raise ValueError("spread_checks >= 2 and check_every >= 1 required")


@dataclass
class SolveResult:
    u: Field
    c_star: float
    multiplier: float
    report: Optional[IdentityReport]
    status: Status
    iterations: int
    grad_norm: float
    c_history: np.ndarray = field(repr=False)
    r_half_history: np.ndarray = field(repr=False)
    message: str = ""

    @property
    def best_c(self) -> float:
        return float(np.min(self.c_history))

    def euler_lagrange_field(self) -> Field:
        """Minimiser rescaled to solve the equation without a multiplier."""
        return self.u * el_scale(self.u.grid.params, self.multiplier)


def el_scale(params: ProblemParams, multiplier: float) -> float:
    """``t`` with ``t^(2p-2) = p * theta``.

    ``grad_Q = theta grad_D`` reads ``-Lap u + V u = p theta F(u)`` with
    ``F(u) = (I * |u|^p)|u|^(p-2) u`` homogeneous of degree ``2p - 1``.
    """
    if not multiplier > 0:
        raise SolverError("multiplier must be positive for the Euler-Lagrange rescaling")
    p = params.p
    return (p * multiplier) ** (1.0 / (2 * p - 2))


def normalize(op: RieszOperator, u) -> Field:
    """``u / D(u)^(1/(2p))``, so that the constraint equals one."""
    vals = values_on(op.grid, u)
    D = constraint_D(op, vals)
    if not D > 0:
        raise SolverError("cannot normalise a field with vanishing nonlocal term")
    out = vals / D ** (1.0 / (2 * op.params.p))
    return Field(op.grid, out)


def _initial_values(grid: RadialGrid, init) -> np.ndarray:
    if isinstance(init, HlsInit):
        return HlsProfile(1.0, init.lam, grid.N)(grid.nodes)
    if isinstance(init, Gaussian):
        return np.exp(-0.5 * (grid.nodes / init.sigma) ** 2)
    return np.array(values_on(grid, init), dtype=float)


@dataclass(frozen=True)
class SpreadingReport:
    flag: bool
    r_half: np.ndarray
    reason: str = ""


def spreading_flag(r_half: Sequence[float], R_max: float, fraction: float = 0.5, K: int = 50,
                   min_growth: float = 0.05) -> tuple[bool, str]:
    """Mass escaping: ``R_half > fraction * R_max`` or sustained growth.

    Sustained growth means the last ``K`` checks never decrease ``R_half`` and
    raise it by at least ``min_growth`` (relative) overall.  Node quantisation
    makes ``R_half`` plateau between checks, so strict increase is not required.
    """
    r = np.asarray(r_half, dtype=float)
    if r.size == 0:
        return False, ""
    if r[-1] > fraction * R_max:
        return True, f"half-mass radius {r[-1]:.4g} beyond {fraction} R_max"
    if r.size > K:
        win = r[-K - 1:]
        if np.all(np.diff(win) >= 0) and win[-1] >= (1 + min_growth) * win[0]:
            return True, f"half-mass radius grew from {win[0]:.4g} to {win[-1]:.4g} over {K} checks"
    return False, ""


def spreading_diagnostic(history: Sequence[Field], fraction: float = 0.5, K: int = 50,
                         min_growth: float = 0.05) -> SpreadingReport:
    """Half-mass radii of a sequence of iterates and the spreading verdict."""
    if not history:
        raise ValueError("empty history")
    grid = history[0].grid
    r = np.array([half_mass_radius(grid, u) for u in history])
    flag, why = spreading_flag(r, grid.R_max, fraction, K, min_growth)
    return SpreadingReport(flag, r, why)


class _Precond:
    def __init__(self, grid: RadialGrid, shift: float):
        diag, off = stiffness_bands(grid)
        self.w = grid.weights
        self.diag = diag + shift * self.w
        self.off = off
        self.cb = cholesky_banded(np.vstack([np.append(0.0, off), self.diag]))

    def mul(self, x: np.ndarray) -> np.ndarray:
        y = self.diag * x
        y[:-1] += self.off * x[1:]
        y[1:] += self.off * x[:-1]
        return y

    def sobolev(self, g: np.ndarray) -> np.ndarray:
        """Representer of ``v -> <g, v>_W`` in the G inner product."""
        return cho_solve_banded((self.cb, False), self.w * g)


def solve(grid: RadialGrid, V: Potential, op: RieszOperator, opts: Optional[SolveOptions] = None) -> SolveResult:
    opts = opts or SolveOptions()
    if op.grid.key != grid.key:
        raise SolverError("Riesz operator built on a different grid")
    w = grid.weights
    pre = _Precond(grid, opts.precond_shift)
    eval_potential(V, grid)  # fails early if a tabulated V does not cover the grid

    def energy(x):
        q = energy_Q(grid, V, x)
        if not math.isfinite(q):
            raise SolverError("non-finite energy")
        return q

    u = normalize(op, _initial_values(grid, opts.init)).values
    Q = energy(u)
    c_hist = [Q]
    r_hist = [half_mass_radius(grid, u)]
    checks = [r_hist[0]]
    step = opts.step0
    prev = None
    status, message = Status.MAX_ITERS, "iteration limit reached"
    it = 0
    rel = math.inf
    theta = math.nan
    spread_reason = None
    for it in range(1, opts.max_iters + 1):
        gq = grad_Q(grid, V, u).values
        gd = grad_D(grid, op, u).values
        theta = float(np.dot(w * gq, gd) / np.dot(w * gd, gd))
        res = gq - theta * gd
        rel = math.sqrt(np.dot(w * res, res) / np.dot(w * gq, gq))
        if rel <= opts.grad_tol:
            status, message = Status.CONVERGED, "projected gradient below tolerance"
            it -= 1
            break
        zq, zd = pre.sobolev(gq), pre.sobolev(gd)
        beta = np.dot(w * gd, zq) / np.dot(w * gd, zd)
        d = zq - beta * zd
        slope = float(np.dot(w * gq, d))
        if prev is not None:
            s, dy = u - prev[0], d - prev[1]
            sy = float(np.dot(s, pre.mul(dy)))
            if sy > 0:
                step = min(float(np.dot(s, pre.mul(s))) / sy, opts.max_step)
        while True:
            trial = u - step * d
            try:
                trial = normalize(op, trial).values
                Qt = energy(trial)
            except SolverError:
                Qt = math.inf
            if Qt <= Q - opts.armijo * step * slope:
                break
            step *= opts.shrink
            if step < STEP_FLOOR:
                break
        if step < STEP_FLOOR:
            status, message = Status.MAX_ITERS, "line search step fell below the floor"
            it -= 1
            break
        prev = (u, d)
        u, Q = trial, Qt
        c_hist.append(Q)
        r_hist.append(half_mass_radius(grid, u))
        if it % opts.check_every == 0 and spread_reason is None:
            checks.append(r_hist[-1])
            flag, why = spreading_flag(checks, grid.R_max, opts.spread_fraction, opts.spread_checks,
                                       opts.spread_growth)
            if flag:
                spread_reason = why
                log.info("spreading detected at iteration %d: %s", it, why)
    field_u = Field(grid, u)
    if status is not Status.CONVERGED:
        gq = grad_Q(grid, V, u).values
        gd = grad_D(grid, op, u).values
        theta = float(np.dot(w * gq, gd) / np.dot(w * gd, gd))
    report = None
    try:
        if theta > 0:
            report = identity_report(grid, V, op, field_u * el_scale(grid.params, theta))
        else:
            r0 = identity_report(grid, V, op, field_u)
            report = IdentityReport(r0.nehari_residual, r0.pohozaev_residual, r0.pohozaev_reduced_residual,
                                    r0.degenerate_tilt, rescaled=False)
    except FunctionalError:
        report = None
    if spread_reason is not None:
        # Growth alone cannot tell relaxation towards a wide groundstate from
        # escape to infinity.  A state that is only held by the Dirichlet wall
        # does not satisfy the whole-space Pohozaev balance, so a converged run
        # that does satisfy it clears the flag.
        localized = (status is Status.CONVERGED and report is not None and not report.degenerate_tilt
                     and report.pohozaev_reduced_residual <= opts.spread_clear_tol)
        if localized:
            message = f"{message} (transient growth: {spread_reason})"
        else:
            status, message = Status.SPREADING, f"{spread_reason}; run ended: {message}"
    log.info("solve: %s after %d iterations, c = %.12g, residual %.3g", status.value, it, Q, rel)
    return SolveResult(field_u, Q, theta, report, status, it, rel, np.array(c_hist), np.array(r_hist), message)


@dataclass(frozen=True)
class NullVerification:
    report: IdentityReport
    residual: Field
    interior_residual: float
    Q: float
    kinetic: float
    mass: float


def verify_null_solution(params: ProblemParams, lam: float, R_max: Optional[float] = None, n: int = 2000,
                         grading: float = 1.0) -> NullVerification:
    """Check that the HLS profile with ``C^(2p-2) A' = 1`` solves the equation with the Null potential.

    The default grid is uniform on ``[0, 40 lam]`` so that the check is
    dilation covariant.  Graded grids are accepted, but the cell-centred
    Laplacian is only consistent pointwise on uniform cells.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    A1 = profile_convolution_constant(params)
    if not (math.isfinite(A1) and A1 > 0):
        raise SolverError("profile convolution constant unavailable")
    C = A1 ** (-1.0 / (2 * params.p - 2))
    grid = build_grid(params, R_max if R_max is not None else 40.0 * lam, n, grading)
    op = build_riesz_operator(grid)
    V = Null(lam, params.N)
    u = HlsProfile(C, lam, params.N).field(grid)
    lap = apply_neg_laplacian(grid, u).values
    pot = eval_potential(V, grid).values * u.values
    rhs = nonlocal_force(op, u)
    res = lap + pot - rhs
    interior = grid.nodes <= 0.5 * grid.R_max
    scale = np.max((np.abs(lap) + np.abs(pot) + np.abs(rhs))[interior])
    T = dirichlet_form(grid, u)
    return NullVerification(
        report=identity_report(grid, V, op, u),
        residual=Field(grid, res),
        interior_residual=float(np.max(np.abs(res[interior])) / scale),
        Q=energy_Q(grid, V, u),
        kinetic=T,
        mass=integrate(grid, u.values**2),
    )
