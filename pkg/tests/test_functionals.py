import math

import mpmath
import numpy as np
import pytest
from scipy import integrate as spi

from choquard.functionals import (
    FunctionalError,
    HlsProfile,
    c_infty_reference,
    critical_quotient,
    directional_check,
    energy_Q,
    grad_D,
    grad_Q,
    gradient_hardy_ratio,
    hardy_rayleigh_sup,
    hardy_weighted_sup,
    i_v_functional,
    identity_report,
    kinetic_energy,
    quadrature_identity_error,
)
from choquard.grid import ProblemParams, build_grid, integrate
from choquard.potentials import Constant, Model, Null, Tabulated
from choquard.riesz import build_riesz_operator, constraint_D


def c_infty_oracle(N, a):
    """``J^(1 - 1/p) A'^(-1/p)`` with ``J = int (1+|x|^2)^-N`` and ``A'`` the profile constant."""
    mpmath.mp.dps = 30
    N, a = mpmath.mpf(N), mpmath.mpf(a)
    p = a / N + 1
    J = mpmath.pi ** (N / 2) * mpmath.gamma(N / 2) / mpmath.gamma(N)
    Ap = mpmath.gamma((N - a) / 2) / (2**a * mpmath.gamma((N + a) / 2))
    return float(J ** (1 - 1 / p) * Ap ** (-1 / p))


def test_energy_zero_and_homogeneity(grid31):
    r = grid31.nodes
    u = np.exp(-r / 3) * np.cos(r / 5)
    assert energy_Q(grid31, Model(1.0), np.zeros(grid31.n)) == 0.0
    assert energy_Q(grid31, Model(1.0), 3 * u) == pytest.approx(9 * energy_Q(grid31, Model(1.0), u), rel=1e-12)


def test_energy_of_profile_against_quadrature():
    # the profile must be negligible at the Dirichlet wall, whose jump term grows like 1/h
    g = build_grid(ProblemParams(3, 1.0), 60.0, 2000, 2.0)
    u = (1 + g.nodes**2) ** -1.5
    kin = 4 * math.pi * spi.quad(lambda r: 9 * r**4 * (1 + r * r) ** -5, 0, np.inf, epsrel=1e-13)[0]
    mass = 4 * math.pi * spi.quad(lambda r: r * r * (1 + r * r) ** -3, 0, np.inf, epsrel=1e-13)[0]
    assert kinetic_energy(g, u) == pytest.approx(kin, rel=1e-4)
    assert integrate(g, u * u) == pytest.approx(mass, rel=1e-4)
    assert energy_Q(g, Constant(1.0), u) == pytest.approx(kin + mass, rel=1e-4)


def test_profile_helpers_match_closed_forms():
    prof = HlsProfile(2.0, 1.5, 3)
    assert prof.mass() == pytest.approx(2.0**2 * math.pi**2 / 4, rel=1e-12)
    r = np.linspace(0.1, 5, 7)
    h = 1e-6
    assert np.allclose(prof.derivative(r), (prof(r + h) - prof(r - h)) / (2 * h), rtol=1e-7)
    with pytest.raises(FunctionalError):
        HlsProfile(0.0, 1.0, 3)


@pytest.mark.parametrize("N,a", [(3, 1.0), (3, 2.0), (3, 0.5), (2, 1.0), (5, 1.5)])
def test_c_infty_closed_form(N, a):
    P = ProblemParams(N, a)
    assert c_infty_reference(P) == pytest.approx(c_infty_oracle(N, a), rel=1e-10)
    assert c_infty_reference(P) > 0


def test_c_infty_pinned_value(p31):
    assert c_infty_reference(p31) == pytest.approx(2.1078147305108117, rel=1e-12)


def test_c_infty_dilation_invariance(p31):
    ref = c_infty_reference(p31)
    for lam in (0.5, 2.0):
        assert c_infty_reference(p31, lam) == pytest.approx(ref, rel=1e-6)


def test_normalized_profile_has_unit_constraint(p31, op31):
    for lam in (0.5, 1.0, 2.0):
        u = HlsProfile.normalized(p31, lam).field(op31.grid)
        assert constraint_D(op31, u) == pytest.approx(1.0, rel=1e-3)


def test_critical_quotient(grid31, op31, p31):
    r = grid31.nodes
    u = np.exp(-r * r / 7) * (1 + r)
    q = critical_quotient(grid31, Model(0.4), op31, u)
    assert critical_quotient(grid31, Model(0.4), op31, 2 * u) == pytest.approx(q, rel=1e-10)
    assert critical_quotient(grid31, Model(0.4), op31, 0.01 * u) == pytest.approx(q, rel=1e-10)
    ref = c_infty_reference(p31)
    for lam in (0.5, 1.0, 2.0):
        assert critical_quotient(grid31, Constant(1.0), op31, HlsProfile(1.0, lam, 3).field(grid31)) >= ref - 1e-3
    with pytest.raises(FunctionalError):
        critical_quotient(grid31, Constant(1.0), op31, np.zeros(grid31.n))


def test_gradients_vanish_at_zero(grid31, op31):
    z = np.zeros(grid31.n)
    assert np.all(grad_Q(grid31, Model(1.0), z).values == 0)
    assert np.all(grad_D(grid31, op31, z).values == 0)


def test_gradients_against_finite_differences(small_grid31, small_op31):
    rng = np.random.default_rng(11)
    g = small_grid31
    for V in (Model(1.0), Null(1.0, 3), Constant(1.0)):
        for _ in range(3):
            u = (1 + g.nodes**2) ** -1.5 * (1 + 0.3 * rng.standard_normal(g.n))
            eq, ed = directional_check(g, V, small_op31, u, u * rng.standard_normal(g.n))
            assert eq <= 1e-6 and ed <= 1e-6


def test_grad_D_needs_matching_operator(small_grid31, op31):
    with pytest.raises(ValueError):
        grad_D(small_grid31, op31, np.ones(small_grid31.n))


def test_identity_report_constant_potential_is_degenerate(grid31, op31):
    u = HlsProfile(1.0, 1.0, 3).field(grid31)
    rep = identity_report(grid31, Constant(1.0), op31, u)
    assert rep.degenerate_tilt
    assert rep.pohozaev_reduced_residual == pytest.approx(1.0)
    for x in (rep.nehari_residual, rep.pohozaev_residual, rep.pohozaev_reduced_residual):
        assert 0 <= x <= 1 and math.isfinite(x)
    with pytest.raises(FunctionalError):
        identity_report(grid31, Model(1.0), op31, np.zeros(grid31.n))


@pytest.mark.parametrize("N", [3, 4, 5, 6])
def test_quadrature_identity(N):
    assert quadrature_identity_error(N) <= 1e-8


@pytest.mark.parametrize("N", [3, 4, 5, 6])
@pytest.mark.parametrize("lam", [0.5, 1.0, 2.0])
def test_gradient_hardy_ratio(N, lam):
    target = N * N * (N - 2) / (4 * (N + 1))
    assert gradient_hardy_ratio(ProblemParams(N, 1.0), lam) == pytest.approx(target, abs=1e-6)


def test_gradient_hardy_ratio_needs_three_dimensions():
    with pytest.raises(FunctionalError, match="N-2"):
        gradient_hardy_ratio(ProblemParams(2, 1.0), 1.0)


def test_i_v_constant_potential_is_lambda_independent(p31):
    kin = HlsProfile.normalized(p31, 1.0).kinetic()
    for lam in (0.01, 0.5, 1.0, 7.0, 1e3):
        assert i_v_functional(Constant(1.0), p31, lam) == pytest.approx(kin, rel=1e-9)
    P2 = ProblemParams(2, 1.0)
    kin2 = HlsProfile.normalized(P2, 1.0).kinetic()
    assert i_v_functional(Constant(1.0), P2, 3.0) == pytest.approx(kin2, rel=1e-9)


@pytest.mark.parametrize("mu", [0.2, 0.5, 0.6, 1.0, 2.0])
def test_i_v_model_monotone_with_sign_set_by_threshold(p31, mu):
    lams = np.logspace(-2, 4, 40)
    vals = np.array([i_v_functional(Model(mu), p31, lam) for lam in lams])
    assert np.all(np.diff(vals) <= 1e-12 * np.abs(vals).max())
    assert (vals.min() < 0) == (mu > 9 / 16)


@pytest.mark.filterwarnings("ignore::scipy.integrate.IntegrationWarning")
def test_i_v_tabulated_matches_closed_form(p31):
    r = np.linspace(0.0, 200.0, 20001)
    T = Tabulated(tuple(r), tuple(Model(1.0).value(r)))
    for lam in (0.5, 1.0, 4.0):
        assert i_v_functional(T, p31, lam) == pytest.approx(i_v_functional(Model(1.0), p31, lam), rel=1e-4, abs=1e-6)
    with pytest.raises(FunctionalError):
        i_v_functional(Model(1.0), p31, 0.0)


def test_hardy_constant_potential_is_zero(small_grid31):
    assert hardy_weighted_sup(small_grid31, Constant(1.0)) == 0.0


def test_hardy_sharp_constant_approached_from_below():
    c = 0.7
    vals = []
    for n in (250, 1000, 4000):
        g = build_grid(ProblemParams(3, 1.0), 40.0, n)
        vals.append(hardy_rayleigh_sup(g, c / g.nodes**2))
    bound = 4 * c / (3 - 2) ** 2
    assert vals[0] < vals[1] < vals[2] < bound


def test_hardy_model_small_mu(small_grid31):
    h = hardy_weighted_sup(small_grid31, Model(0.1))
    assert 0 < h < 1
    assert hardy_weighted_sup(small_grid31, Model(0.2)) == pytest.approx(2 * h, rel=1e-8)
