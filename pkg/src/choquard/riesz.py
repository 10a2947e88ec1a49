"""Riesz potential I_alpha * f for radial f, realised as a dense kernel matrix.

Functions are piecewise constant on the grid cells.  Entry ``B[i, j]`` is the
Galerkin integral of ``|x - y|^(alpha-N)`` over the shells of cells ``i`` and
``j``, reduced to a double radial integral of the spherical-mean kernel.  The
operator is ``K = B / w[:, None]``, so ``integrate((I*f) g) == integrate(f (I*g))``
holds to rounding.  Near the diagonal the kernel is weakly singular; in N = 1
and N = 3 those cells use closed-form antiderivatives, elsewhere a vectorised
adaptive rule after a substitution that removes the diagonal singularity.  Far
cells use tensor Gauss-Legendre rules.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import factorial, gamma, pi
from pathlib import Path

import numpy as np
from scipy import integrate as spi
from scipy.special import digamma, hyp2f1

from .grid import Field, GridError, ProblemParams, RadialGrid, build_grid, sphere_area, values_on

log = logging.getLogger(__name__)

KERNEL_VERSION = "riesz-kernel-v2"
CACHE_ENV = "CHOQUARD_CACHE_DIR"

# (cells on each side treated adaptively, width of the band refined with more Gauss nodes)
_NEAR = 1
_BAND = 8


def riesz_normalization(params: ProblemParams) -> float:
    """Gamma((N-alpha)/2) / (2^alpha pi^(N/2) Gamma(alpha/2))."""
    N, a = params.N, params.alpha
    return gamma((N - a) / 2) / (2.0**a * pi ** (N / 2) * gamma(a / 2))


def angular_kernel(params: ProblemParams, r: float, s: float, epsabs: float = 1e-10) -> float:
    """Spherical mean of ``|x - y|^(alpha-N)`` over ``|y| = s`` for ``|x| = r``.

    Evaluated by adaptive quadrature in ``t = cos(theta)``.  This is the slow
    reference route; :func:`angular_kernel_closed` is what the assembly uses.
    """
    N, a = params.N, params.alpha
    if r <= 0 or s < 0:
        raise ValueError("need r > 0 and s >= 0")
    if r == s:
        raise ValueError("r == s is weakly singular; use the cell-integrated kernel")
    if s == 0:
        return r ** (a - N)
    e = (a - N) / 2
    if N == 1:
        return 0.5 * (abs(r - s) ** (a - 1) + (r + s) ** (a - 1))
    d2 = (r - s) ** 2
    val, _ = spi.quad(
        lambda t: (d2 + 2 * r * s * (1 - t)) ** e,
        -1.0,
        1.0,
        weight="alg",
        wvar=((N - 3) / 2, (N - 3) / 2),
        epsabs=epsabs,
        epsrel=1e-12,
        limit=400,
    )
    return sphere_area(N - 1) / sphere_area(N) * val


def angular_kernel_closed(params: ProblemParams, r, s, diff=None):
    """Vectorised spherical mean via ``max^(alpha-N) 2F1((N-alpha)/2, 1-alpha/2; N/2; (min/max)^2)``.

    ``diff``, when given, is ``s - r`` computed without rounding; very close to the
    diagonal it carries digits that ``s - r`` in floating point has lost.
    """
    N, a = params.N, params.alpha
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    gap = np.abs(r - s) if diff is None else np.abs(np.asarray(diff, dtype=float))
    if N == 1:
        return 0.5 * (gap ** (a - 1) + (r + s) ** (a - 1))
    big = np.maximum(r, s)
    small = np.minimum(r, s)
    z = (small / big) ** 2
    # 1 - z without cancellation; the series is singular at z = 1 when alpha <= 1
    omz = gap * (big + small) / big**2
    A, B, C = (N - a) / 2, 1 - a / 2, N / 2
    if N == 3:
        return _mean_3d(a, big, small, z, A * B / C)
    if a > 1 and float(a).is_integer():
        # terminating (even alpha) or C^1 at z = 1; the connection formula has poles here
        return big ** (a - N) * hyp2f1(A, B, C, z)
    near = omz < 0.1
    w = np.where(near, omz, 0.1)
    with np.errstate(divide="ignore", invalid="ignore"):
        F_near = _hyp2f1_log_series(A, B, w) if a == 1 else _hyp2f1_about_one(A, B, C, w)
    F = np.where(near, F_near, hyp2f1(A, B, C, np.where(near, 0.0, z)))
    return big ** (a - N) * F


def _hyp2f1_about_one(a, b, c, w):
    """``2F1(a, b; c; 1 - w)`` through the connection formula about 1 (``c - a - b`` not an integer).

    Taking ``w`` as input avoids forming ``1 - w`` in floating point, which costs
    every digit of the singular part when ``w`` is tiny.
    """
    e = c - a - b
    t1 = gamma(c) * gamma(e) / (gamma(c - a) * gamma(c - b)) * hyp2f1(a, b, 1 - e, w)
    t2 = gamma(c) * gamma(-e) / (gamma(a) * gamma(b)) * w**e * hyp2f1(c - a, c - b, 1 + e, w)
    return t1 + t2


def _hyp2f1_log_series(a, b, w, terms=20):
    """``2F1(a, b; a + b; 1 - w)``, the logarithmic case, as a series in ``w <= 1/10``."""
    total = np.zeros_like(w)
    coef = 1.0
    log_w = np.log(w)
    for k in range(terms):
        total = total + coef * (2 * digamma(k + 1.0) - digamma(a + k) - digamma(b + k) - log_w) * w**k
        coef *= (a + k) * (b + k) / (k + 1.0) ** 2
    return gamma(a + b) / (gamma(a) * gamma(b)) * total


def _mean_3d(a, big, small, z, c1):
    # ((r+s)^(a-1) - |r-s|^(a-1)) / (2 r s (a-1)); two-term series where that cancels
    beta = a - 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        if beta == 0.0:
            exact = np.log((big + small) / (big - small)) / (2 * big * small)
        else:
            exact = ((big + small) ** beta - (big - small) ** beta) / (2 * big * small * beta)
        series = big ** (a - 3) * (1 + c1 * z)
    return np.where(z < 1e-6, series, exact)


def profile_convolution_constant(params: ProblemParams) -> float:
    """Constant A' with ``I_alpha * (1+r^2)^(-(N+alpha)/2) = A' (1+r^2)^(-(N-alpha)/2)``.

    Computed from the value of the convolution at the origin, which is a
    one-dimensional integral.
    """
    N, a = params.N, params.alpha
    integrand = lambda s: s ** (a - 1) * (1 + s * s) ** (-(N + a) / 2)
    head, _ = spi.quad(integrand, 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=400)
    tail, _ = spi.quad(integrand, 1.0, np.inf, epsabs=0, epsrel=1e-13, limit=400)
    return riesz_normalization(params) * sphere_area(N) * (head + tail)


@dataclass(frozen=True, eq=False)
class RieszOperator:
    """Dense realisation of ``f -> I_alpha * f``; ``K[i, j] * w[i]`` is symmetric."""

    params: ProblemParams
    grid: RadialGrid
    A: float
    K: np.ndarray = field(repr=False)

    def __call__(self, f) -> np.ndarray:
        return self.K @ f


def _power_antiderivative(t, beta, k):
    """k-th antiderivative of ``|t|^beta / beta`` (``log|t|`` when beta == 0), zero at t = 0."""
    t = np.asarray(t, dtype=float)
    if beta == 0.0:
        harmonic = sum(1.0 / i for i in range(1, k + 1))
        with np.errstate(divide="ignore", invalid="ignore"):
            v = t**k / factorial(k) * (np.log(np.abs(t)) - harmonic)
        return np.where(t == 0.0, 0.0, v)
    den = beta * np.prod([beta + i for i in range(1, k + 1)])
    return np.sign(t) ** k * np.abs(t) ** (beta + k) / den


def _rect(F, lo_r, hi_r, lo_s, hi_s):
    return F(hi_r, hi_s) - F(lo_r, hi_s) - F(hi_r, lo_s) + F(lo_r, lo_s)


def _near_exact(params, grid, I, J):
    """Closed-form cell-pair integrals for N = 1 and N = 3 (kernel elementary in r, s)."""
    N, beta = params.N, params.alpha - 1.0
    a_r, b_r = grid.faces[I], grid.faces[I + 1]
    a_s, b_s = grid.faces[J], grid.faces[J + 1]
    Phi = lambda t, k: _power_antiderivative(t, beta, k)
    if N == 3:
        # integrand 8 pi^2 r s (phi(r+s) - phi(|r-s|)),  phi(t) = t^beta / beta
        def F_sum(r, s):
            S = r + s
            return r * s * Phi(S, 2) - S * Phi(S, 3) + Phi(S, 4)

        def F_diff(r, s):
            d = r - s
            return -r * s * Phi(d, 2) + Phi(d, 4) - d * Phi(d, 3)

        return 8 * pi**2 * (_rect(F_sum, a_r, b_r, a_s, b_s) - _rect(F_diff, a_r, b_r, a_s, b_s))
    # N == 1: integrand 2 (|r-s|^beta + (r+s)^beta); beta < 0 here since alpha < 1
    F_sum = lambda r, s: Phi(r + s, 2)
    F_diff = lambda r, s: -Phi(r - s, 2)
    return 2 * beta * (_rect(F_sum, a_r, b_r, a_s, b_s) + _rect(F_diff, a_r, b_r, a_s, b_s))


def _pair_gauss(params, grid, I, J, order):
    """Tensor Gauss-Legendre approximation of the cell-pair integrals (smooth kernel)."""
    x, w = np.polynomial.legendre.leggauss(order)
    S = sphere_area(params.N)
    N = params.N

    def nodes(cells):
        lo, hi = grid.faces[cells], grid.faces[cells + 1]
        half = 0.5 * (hi - lo)
        pts = 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]
        wts = (half[:, None] * w[None, :]) * S * pts ** (N - 1)
        return pts, wts

    rp, rw = nodes(I)
    sp, sw = nodes(J)
    m = angular_kernel_closed(params, rp[:, :, None], sp[:, None, :])
    return np.einsum("ka,kab,kb->k", rw, m, sw)


def _near_vectorised(params, grid, I, J, order=8):
    """Outer Gauss over cells ``I``, inner adaptive quadrature over cells ``J`` (any N).

    Each inner integral is mapped to ``[-1, 1]`` so the singular point ``s = r`` sits at
    the same abscissa for every pair; one vector-valued adaptive rule then covers all pairs.
    For neighbouring cells the singularity sits on an endpoint, which the rule never samples.
    """
    x, w = np.polynomial.legendre.leggauss(order)
    S = sphere_area(params.N)
    N, a = params.N, params.alpha
    hr = 0.5 * (grid.faces[I + 1] - grid.faces[I])
    mr = 0.5 * (grid.faces[I + 1] + grid.faces[I])
    hs = 0.5 * (grid.faces[J + 1] - grid.faces[J])
    ms = 0.5 * (grid.faces[J + 1] + grid.faces[J])
    big = np.maximum(mr, ms)
    # rough magnitude per pair, so the max-norm tolerance is relative for every entry
    scale = S * S * hr * hs * mr ** (N - 1) * ms ** (N - 1) * big ** (a - N) * (hs / big) ** min(a - 1.0, 0.0)
    diagonal = np.array_equal(I, J)
    # y = xk +- L |t|^q turns |y - xk|^(a-1) dy into a smooth integrand
    q = 2.0 / a if a < 1 else 2.0
    total = np.zeros(len(I))
    for xk, wk in zip(x, w):
        r = mr + hr * xk
        outer = S * r ** (N - 1) * hr / scale

        def g(y, dy=None):
            s = ms + hs * y
            diff = None if dy is None else hs * dy
            with np.errstate(divide="ignore", invalid="ignore"):
                v = angular_kernel_closed(params, r, s, diff) * S * s ** (N - 1) * hs * outer
            return np.where(np.isfinite(v), v, 0.0)

        if diagonal:
            def f(t, xk=xk):
                L = (1.0 - xk) if t > 0 else (1.0 + xk)
                dy = np.sign(t) * L * abs(t) ** q
                return g(xk + dy, dy) * (q * L * abs(t) ** (q - 1))

            pts = (0.0,)
        else:
            f, pts = g, None
        val, _ = spi.quad_vec(f, -1.0, 1.0, epsabs=1e-13, epsrel=1e-10, norm="max", points=pts, limit=2000)
        total += wk * val
    return total * scale


def _far_field(params, grid, block=256):
    """All cell pairs by tensor Gauss; near-diagonal entries are overwritten later."""
    n = grid.n
    # integrate the r^(N-1) volume weight exactly, which matters in the cell at the origin
    order = max(2, (params.N + 1) // 2)
    x, w = np.polynomial.legendre.leggauss(order)
    S = sphere_area(params.N)
    lo, hi = grid.faces[:-1], grid.faces[1:]
    half = 0.5 * (hi - lo)
    pts = (0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]).ravel()
    wts = ((half[:, None] * w[None, :]) * S * (0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :]) ** (params.N - 1)).ravel()
    B = np.empty((n, n))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for start in range(0, n, block):
            stop = min(n, start + block)
            rows = slice(start * order, stop * order)
            m = angular_kernel_closed(params, pts[rows, None], pts[None, :])
            m *= wts[rows, None] * wts[None, :]
            B[start:stop] = m.reshape(stop - start, order, n, order).sum(axis=(1, 3))
    return B


def assemble_kernel(grid: RadialGrid) -> np.ndarray:
    """Kernel matrix ``K = B / w[:, None]`` with ``B`` the symmetric cell-pair Galerkin matrix."""
    params = grid.params
    n = grid.n
    B = _far_field(params, grid)
    idx = np.arange(n)
    for off in range(0, _BAND + 1):
        I = idx[: n - off]
        J = I + off
        if params.N in (1, 3):
            vals = _near_exact(params, grid, I, J)
            # away from the origin the (r + s) half is smooth; Gauss avoids cancellation in r s Phi(r + s)
            if params.N == 3:
                smooth = I > 4 * _BAND
                if smooth.any():
                    vals[smooth] = _sum_part_gauss(params, grid, I[smooth], J[smooth]) - _diff_part(
                        params, grid, I[smooth], J[smooth]
                    )
        elif off <= _NEAR:
            vals = 0.5 * (_near_vectorised(params, grid, I, J) + _near_vectorised(params, grid, J, I))
        else:
            vals = _pair_gauss(params, grid, I, J, 10)
        B[I, J] = vals
        B[J, I] = vals
    B = 0.5 * (B + B.T)
    B *= riesz_normalization(params)
    return B / grid.weights[:, None]


def _diff_part(params, grid, I, J):
    """The ``|r - s|`` half of the N = 3 closed form."""
    beta = params.alpha - 1.0
    Phi = lambda t, k: _power_antiderivative(t, beta, k)

    def F_diff(r, s):
        d = r - s
        return -r * s * Phi(d, 2) + Phi(d, 4) - d * Phi(d, 3)

    a_r, b_r = grid.faces[I], grid.faces[I + 1]
    a_s, b_s = grid.faces[J], grid.faces[J + 1]
    return 8 * pi**2 * _rect(F_diff, a_r, b_r, a_s, b_s)


def _sum_part_gauss(params, grid, I, J, order=6):
    """Gauss rule for the ``(r + s)`` half of the N = 3 closed form."""
    beta = params.alpha - 1.0
    x, w = np.polynomial.legendre.leggauss(order)

    def nodes(cells):
        lo, hi = grid.faces[cells], grid.faces[cells + 1]
        half = 0.5 * (hi - lo)
        return 0.5 * (hi + lo)[:, None] + half[:, None] * x[None, :], half[:, None] * w[None, :]

    rp, rw = nodes(I)
    sp, sw = nodes(J)
    S = rp[:, :, None] + sp[:, None, :]
    phi = np.log(S) if beta == 0.0 else S**beta / beta
    f = rp[:, :, None] * sp[:, None, :] * phi
    return 8 * pi**2 * np.einsum("ka,kab,kb->k", rw, f, sw)


def _cache_path(key) -> Path | None:
    root = os.environ.get(CACHE_ENV)
    if not root:
        return None
    digest = hashlib.sha1(repr((KERNEL_VERSION, key)).encode()).hexdigest()[:16]
    return Path(root) / f"riesz_{digest}.npz"


def _load_cached(key, n):
    path = _cache_path(key)
    if path is None or not path.exists():
        return None
    try:
        with np.load(path, allow_pickle=False) as data:
            if str(data["version"]) != KERNEL_VERSION or tuple(data["key"]) != tuple(map(float, key)):
                return None
            K = data["K"]
        return K if K.shape == (n, n) else None
    except (OSError, KeyError, ValueError):
        log.warning("ignoring unreadable kernel cache %s", path)
        return None


def _store_cached(key, K):
    path = _cache_path(key)
    if path is None:
        return
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    np.savez(tmp, K=K, key=np.array(key, dtype=float), version=KERNEL_VERSION)
    os.replace(tmp, path)


@lru_cache(maxsize=8)
def _operator_for_key(key) -> RieszOperator:
    N, alpha, R_max, n, grading = key
    grid = build_grid(ProblemParams(N, alpha), R_max, n, grading)
    K = _load_cached(key, n)
    if K is None:
        K = assemble_kernel(grid)
        _store_cached(key, K)
    K.setflags(write=False)
    return RieszOperator(grid.params, grid, riesz_normalization(grid.params), K)


def build_riesz_operator(grid: RadialGrid) -> RieszOperator:
    """Assemble (or fetch from cache) the Riesz operator for ``grid``."""
    if not isinstance(grid, RadialGrid):
        raise GridError("build_riesz_operator needs a RadialGrid")
    cached = _operator_for_key(grid.key)
    return RieszOperator(grid.params, grid, cached.A, cached.K)


def riesz_apply(op: RieszOperator, f) -> Field:
    """``(I_alpha * f)(r_i)`` for the radial field ``f``."""
    return Field(op.grid, op.K @ values_on(op.grid, f))


def constraint_D(op: RieszOperator, u) -> float:
    """``int (I_alpha * |u|^p) |u|^p`` with the lower critical exponent p."""
    vals = values_on(op.grid, u)
    g = np.abs(vals) ** op.params.p
    D = float(np.dot(op.grid.weights * g, op.K @ g))
    if not np.isfinite(D):
        raise ValueError("non-finite nonlocal term")
    return D


@dataclass(frozen=True)
class ProfileCheck:
    """Errors of ``I_alpha * (1+r^2)^(-(N+a)/2)`` against ``A' (1+r^2)^(-(N-a)/2)`` on ``r <= R_max/2``."""

    sup_error: float
    pointwise_error: float
    A_prime: float


def profile_oracle_check(op: RieszOperator) -> ProfileCheck:
    """Compare the discrete operator with the closed-form image of the HLS profile.

    ``sup_error`` is normwise, ``max|err| / max|ref|``; the pointwise ratio
    grows towards ``R_max/2`` where the truncated tail of the source matters.
    """
    N, a = op.params.N, op.params.alpha
    r = op.grid.nodes
    Ap = profile_convolution_constant(op.params)
    ref = Ap * (1 + r * r) ** (-(N - a) / 2)
    out = op.K @ (1 + r * r) ** (-(N + a) / 2)
    inner = r <= 0.5 * op.grid.R_max
    err = np.abs(out - ref)[inner]
    return ProfileCheck(float(err.max() / ref[inner].max()), float((err / ref[inner]).max()), Ap)


def symmetry_error(op: RieszOperator) -> float:
    """``max |wK - (wK)^T| / max |wK|``."""
    B = op.grid.weights[:, None] * op.K
    return float(np.abs(B - B.T).max() / np.abs(B).max())
