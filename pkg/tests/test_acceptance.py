"""Acceptance suite: one recorded verdict per criterion, printed in the terminal summary."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from choquard.functionals import (
    HlsProfile,
    c_infty_reference,
    critical_quotient,
    directional_check,
    gradient_hardy_ratio,
    i_v_functional,
    quadrature_identity_error,
)
from choquard.grid import ProblemParams, build_grid
from choquard.potentials import Constant, Model, Null, thresholds, thresholds_exact
from choquard.riesz import build_riesz_operator, profile_convolution_constant, profile_oracle_check
from choquard.solver import Status, solve, verify_null_solution

from conftest import record

LAMBDAS = (0.5, 1.0, 2.0)


def test_criterion_1_quadrature_identity():
    t0 = time.perf_counter()
    errs = {N: quadrature_identity_error(N) for N in (3, 4, 5, 6)}
    worst = max(errs.values())
    dt = time.perf_counter() - t0
    ok = worst <= 1e-8 and dt < 1.0
    record("1 quadrature identity", ok, f"max rel err {worst:.2e} (tol 1e-8), {dt:.2f} s")
    assert ok


def test_criterion_2_gradient_hardy_ratio():
    t0 = time.perf_counter()
    P = ProblemParams(3, 1.0)
    target = 3 * 3 * (3 - 2) / (4 * (3 + 1))
    worst = max(abs(gradient_hardy_ratio(P, lam) - target) for lam in LAMBDAS)
    dt = time.perf_counter() - t0
    ok = worst <= 1e-6 and dt < 1.0 and target == 9 / 16
    record("2 gradient/Hardy ratio", ok, f"max |ratio - 9/16| {worst:.2e} (tol 1e-6), {dt:.2f} s")
    assert ok


def test_criterion_3_riesz_profile_oracle():
    t0 = time.perf_counter()
    errs, pins = {}, {}
    for a in (0.5, 1.0, 2.0):
        P = ProblemParams(3, a)
        errs[a] = profile_oracle_check(build_riesz_operator(build_grid(P, 40.0, 2000))).sup_error
        closed = math.gamma((3 - a) / 2) / (2**a * math.gamma((3 + a) / 2))
        pins[a] = abs(profile_convolution_constant(P) / closed - 1)
    dt = time.perf_counter() - t0
    ok = max(errs.values()) <= 1e-3 and max(pins.values()) <= 1e-10 and dt < 60
    detail = ", ".join(f"alpha={a:g}: {e:.2e}" for a, e in errs.items())
    record("3 Riesz profile oracle", ok, f"sup err {detail} (tol 1e-3); A' pin {max(pins.values()):.1e}; {dt:.1f} s")
    assert ok


def test_criterion_4_gradients():
    t0 = time.perf_counter()
    g = build_grid(ProblemParams(3, 1.0), 40.0, 500)
    op = build_riesz_operator(g)
    rng = np.random.default_rng(2024)
    worst_q = worst_d = 0.0
    for _ in range(10):
        u = (1 + g.nodes**2) ** -1.5 * (1 + 0.3 * rng.standard_normal(g.n))
        eq, ed = directional_check(g, Model(1.0), op, u, u * rng.standard_normal(g.n))
        worst_q, worst_d = max(worst_q, eq), max(worst_d, ed)
    dt = time.perf_counter() - t0
    ok = max(worst_q, worst_d) <= 1e-6 and dt < 10
    record("4 gradient correctness", ok, f"grad_Q {worst_q:.2e}, grad_D {worst_d:.2e} (tol 1e-6), {dt:.2f} s")
    assert ok


def test_criterion_5_c_infty(op31, grid31, p31):
    t0 = time.perf_counter()
    ref = c_infty_reference(p31)
    spread = max(abs(c_infty_reference(p31, lam) - ref) / ref for lam in LAMBDAS)
    worst = min(critical_quotient(grid31, Constant(1.0), op31, HlsProfile(1.0, lam, 3).field(grid31))
                for lam in LAMBDAS)
    dt = time.perf_counter() - t0
    ok = spread <= 1e-6 and worst >= ref - 1e-3 and dt < 10
    record("5 c_inf and dilation invariance", ok,
           f"c_inf {ref:.10f}, spread {spread:.1e}, min quotient - c_inf {worst - ref:+.2e}, {dt:.2f} s")
    assert ok


def test_criterion_6_existence_regime(wide_grid31, wide_op31, p31):
    t0 = time.perf_counter()
    r = solve(wide_grid31, Model(1.0), wide_op31)
    dt = time.perf_counter() - t0
    ref = c_infty_reference(p31)
    rep = r.report
    ok = (r.status is Status.CONVERGED and r.c_star <= ref - 1e-3 and rep is not None
          and rep.nehari_residual <= 1e-4 and rep.pohozaev_residual <= 1e-4 and dt < 300)
    record("6 existence for Model(1)", ok,
           f"{r.status.value}, c* {r.c_star:.6f} vs c_inf {ref:.6f}, Nehari {rep.nehari_residual:.1e}, "
           f"Pohozaev {rep.pohozaev_residual:.1e}, {dt:.1f} s")
    assert ok


@pytest.mark.parametrize("label,V", [("Constant(1)", Constant(1.0)), ("Model(0.1)", Model(0.1))])
def test_criterion_7_nonattainment(label, V, wide_grid31, wide_op31, p31):
    t0 = time.perf_counter()
    r = solve(wide_grid31, V, wide_op31)
    dt = time.perf_counter() - t0
    gap = r.best_c - c_infty_reference(p31)
    ok = r.status is Status.SPREADING and abs(gap) <= 1e-3 and dt < 300
    record(f"7 nonattainment for {label}", ok, f"{r.status.value}, best c - c_inf {gap:+.2e} (tol 1e-3), {dt:.1f} s")
    assert ok


def test_criterion_8_null_solution():
    # The residual bound holds.  The second bound asks for |Q| <= 1e-3 T, but
    # testing the equation against u gives Q(u) = D(u) = int u^2 > 0 for this
    # family, so it is checked as stated and expected to fail.
    t0 = time.perf_counter()
    P = ProblemParams(3, 2.0)
    runs = {lam: verify_null_solution(P, lam) for lam in LAMBDAS}
    dt = time.perf_counter() - t0
    res = max(nv.interior_residual for nv in runs.values())
    literal = max(abs(nv.Q) / nv.kinetic for nv in runs.values())
    mass_gap = max(abs(nv.Q - nv.mass) / nv.kinetic for nv in runs.values())
    ok = res <= 1e-3 and literal <= 1e-3 and dt < 60
    record("8 exact null solution", ok,
           f"EL residual {res:.1e} (tol 1e-3); |Q|/T {literal:.3f} (tol 1e-3); |Q - int u^2|/T {mass_gap:.1e}; "
           f"{dt:.1f} s")
    assert ok


def test_criterion_8_residual_part_and_mass_identity():
    for lam in LAMBDAS:
        nv = verify_null_solution(ProblemParams(3, 2.0), lam)
        assert nv.interior_residual <= 1e-3
        assert abs(nv.Q - nv.mass) <= 1e-3 * nv.kinetic


def test_criterion_9_iv_sign():
    t0 = time.perf_counter()
    P = ProblemParams(3, 1.0)
    lams = np.logspace(-2, 4, 40)
    infs = {mu: min(i_v_functional(Model(mu), P, lam) for lam in lams) for mu in (0.4, 0.51, 0.62, 0.7, 1.0)}
    dt = time.perf_counter() - t0
    ok = all((v < 0) == (mu > 9 / 16) for mu, v in infs.items()) and dt < 30
    record("9 I_V sign versus 9/16", ok, ", ".join(f"mu={mu:g}: {v:+.2e}" for mu, v in infs.items()) + f", {dt:.1f} s")
    assert ok


def test_criterion_10_threshold_arithmetic():
    # The pairs match exactly.  The ratio of the two thresholds is
    # (N-2)(N+1)/N^2 = 1 - (N+2)/N^2, not the stated 1 - (N-2)/N^2, so the
    # literal ratio identity is checked as stated and expected to fail.
    t0 = time.perf_counter()
    pairs_ok, exact_ratio_ok, literal_ok = True, True, True
    for N in range(1, 11):
        suff, non = thresholds_exact(N)
        th = thresholds(N)
        pairs_ok &= suff == Fraction(N * N * max(N - 2, 0), 4 * (N + 1)) and non == Fraction((N - 2) ** 2, 4)
        pairs_ok &= th.sufficient == float(suff) and th.nonexist == float(non)
        if N >= 3:
            exact_ratio_ok &= non / suff == 1 - Fraction(N + 2, N * N)
            literal_ok &= non / suff == 1 - Fraction(N - 2, N * N)
    dt = time.perf_counter() - t0
    ok = pairs_ok and literal_ok and dt < 1.0
    record("10 threshold arithmetic", ok,
           f"pairs {'exact' if pairs_ok else 'WRONG'}; ratio 1-(N+2)/N^2 {'holds' if exact_ratio_ok else 'fails'}; "
           f"stated ratio 1-(N-2)/N^2 {'holds' if literal_ok else 'fails'} (N=3: {Fraction(1, 4) / Fraction(9, 16)} "
           f"vs {1 - Fraction(1, 9)})")
    assert ok


def test_criterion_10_pairs_and_corrected_ratio():
    for N in range(1, 11):
        suff, non = thresholds_exact(N)
        assert suff == Fraction(N * N * max(N - 2, 0), 4 * (N + 1)) and non == Fraction((N - 2) ** 2, 4)
        if N >= 3:
            assert non / suff == 1 - Fraction(N + 2, N * N)


def test_null_potential_is_not_gated():
    # solves with the Null family are exploratory only; they must run and report a status
    g = build_grid(ProblemParams(3, 1.0), 40.0, 400)
    r = solve(g, Null(1.0, 3), build_riesz_operator(g))
    assert r.status in tuple(Status)
