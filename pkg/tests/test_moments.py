import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from vrjptree.exceptions import NumericalError
from vrjptree.moments import IgParams, MomentEngine, ig_density, ig_sample

# Reference values from 30-digit mpmath quadrature of x^t times the density.
MU_REF = {0.5: 0.78963995923565708277, 1.0: 0.91314942178681907163, 2.0: 0.97229840646617564406}
XI_HALF_REF = {0.5: 1.9194216537269735213, 1.0: 1.3054616057932368012, 2.0: 1.0876378473565338493}
T_STAR_06_C1 = 1.8070662626524076981
RATE_05_C1 = 0.51374960821047540496


@pytest.fixture(scope="module")
def e1():
    return MomentEngine.for_c(1.0)


def test_params_validation():
    for bad in (0.0, -1.0, math.inf, math.nan):
        with pytest.raises(ValueError):
            IgParams(bad)
    assert IgParams(2.0).shape == 4.0


def test_density_at_one():
    assert ig_density(1.0, IgParams(1.0)) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-12)


def test_density_domain():
    with pytest.raises(ValueError):
        ig_density(0.0, IgParams(1.0))
    with pytest.raises(ValueError):
        ig_density(np.array([1.0, -2.0]), IgParams(1.0))


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_density_mass_and_mean(c):
    p = IgParams(c)
    mass = integrate.quad(lambda x: ig_density(x, p), 0, np.inf, limit=200)[0]
    mean = integrate.quad(lambda x: x * ig_density(x, p), 0, np.inf, limit=200)[0]
    assert mass == pytest.approx(1.0, abs=1e-8)
    assert mean == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_density_matches_scipy(c):
    x = np.linspace(0.01, 6, 50)
    ref = stats.invgauss(mu=1 / c**2, scale=c**2).pdf(x)
    np.testing.assert_allclose(ig_density(x, IgParams(c)), ref, rtol=1e-10)


def test_sampler_mean_and_variance():
    rng = np.random.default_rng(11)
    a = ig_sample(IgParams(1.0), rng, size=10**6)
    assert abs(a.mean() - 1) < 0.01
    assert abs(a.var() - 1) < 0.02
    p = stats.kstest(a[:20000], stats.invgauss(mu=1.0, scale=1.0).cdf).pvalue
    assert p > 1e-3


def test_sampler_negative_moment():
    rng = np.random.default_rng(12)
    a = ig_sample(IgParams(2.0), rng, size=10**6)
    xi2 = 1 + 3 / 4 + 3 / 16
    assert abs(np.mean(a**-2.0) / xi2 - 1) < 0.01


def test_sampler_scalar_and_positive():
    rng = np.random.default_rng(0)
    x = ig_sample(IgParams(0.2), rng)
    assert isinstance(x, float) and x > 0
    assert np.all(ig_sample(IgParams(0.05), rng, size=10000) > 0)


@pytest.mark.parametrize("t", [-1.0, -0.5, 0.5, 2.0])
def test_sampler_vs_quadrature(e1, t):
    rng = np.random.default_rng(int(10 * t) + 40)
    a = ig_sample(IgParams(1.0), rng, size=10**6) ** t
    se = a.std() / math.sqrt(a.size)
    assert abs(a.mean() - e1.moment(t)) < 3 * se


def test_psi_fixed_points(e1):
    assert abs(e1.psi(0.0)) < 1e-12
    assert abs(e1.psi(1.0)) < 1e-12
    assert e1.psi(-2.0) == pytest.approx(math.log(7.0), abs=1e-10)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0, 4.0])
def test_xi2_closed_form(c):
    assert abs(MomentEngine.for_c(c).xi(2.0) - (1 + 3 / c**2 + 3 / c**4)) < 1e-8


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_second_moment(c):
    assert MomentEngine.for_c(c).moment(2.0) == pytest.approx(1 + 1 / c**2, rel=1e-10)


def test_xi_examples():
    assert MomentEngine.for_c(1.0).xi(0.0) == pytest.approx(1.0, abs=1e-12)
    assert MomentEngine.for_c(2.0).xi(2.0) == pytest.approx(1.9375, abs=1e-10)
    e = MomentEngine.for_c(1.0)
    assert e.xi(0.5) == pytest.approx(math.exp(e.psi(1.5)), rel=1e-10)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
def test_frozen_mu_and_xi_half(c):
    e = MomentEngine.for_c(c)
    assert e.mu() == pytest.approx(MU_REF[c], rel=1e-10)
    assert e.xi(0.5) == pytest.approx(XI_HALF_REF[c], rel=1e-10)


def test_symmetry_grid():
    for c in (0.3, 1.0, 3.0):
        e = MomentEngine.for_c(c)
        for t in np.linspace(-3, 4, 29):
            assert abs(e.psi(t) - e.psi(1 - t)) < 1e-10


def test_convexity_grid(e1):
    t = np.linspace(-3, 4, 71)
    v = np.array([e1.psi(x) for x in t])
    assert np.min(v[2:] - 2 * v[1:-1] + v[:-2]) > -1e-8


def test_quadrature_matches_bessel():
    for c in (0.2, 0.5, 1.0, 3.0, 10.0):
        e = MomentEngine.for_c(c)
        for t in (-3.0, -0.5, 0.25, 0.5, 2.0, 5.0):
            assert e.psi(t) == pytest.approx(e.psi_bessel(t), abs=1e-9)


def test_closed_form_engine():
    e = MomentEngine.for_c(1.0, closed_form=True)
    assert e.psi(-2.0) == pytest.approx(math.log(7.0), abs=1e-10)


def test_psi_rejects_non_finite(e1):
    with pytest.raises(ValueError):
        e1.psi(math.inf)


def test_mu_is_minimum_and_below_one(e1):
    grid = np.round(np.linspace(-2, 3, 101), 10)
    values = [e1.moment(t) for t in grid]
    assert grid[int(np.argmin(values))] == pytest.approx(0.5)
    assert e1.mu() == pytest.approx(min(values), abs=1e-15)
    mus = [MomentEngine.for_c(c).mu() for c in (1, 2, 4, 8)]
    assert all(m < 1 for m in mus)
    assert np.all(np.diff(mus) > 0)
    assert 1 - mus[-1] < 0.01


def test_rate_function_values(e1):
    assert e1.rate_function(0.0) == pytest.approx(-math.log(e1.mu()), abs=1e-10)
    assert e1.rate_function(0.5) == pytest.approx(RATE_05_C1, abs=1e-9)


@pytest.mark.parametrize("x", [0.1, 0.5, 1.0])
def test_rate_function_reflection(e1, x):
    assert abs(e1.rate_function(-x) - (e1.rate_function(x) - x)) < 1e-6


def test_rate_function_convex_nonnegative(e1):
    x = np.linspace(-3, 3, 41)
    v = np.array([e1.rate_function(s) for s in x])
    assert np.all(v >= 0)
    assert np.min(v[2:] - 2 * v[1:-1] + v[:-2]) > -1e-8


@pytest.mark.parametrize("t", [-1.0, 0.2, 0.9, 1.7, 3.0])
def test_legendre_duality(e1, t):
    psi, d1, _ = e1.psi_derivatives(t)
    assert abs(e1.rate_function(d1) - (t * d1 - psi)) < 1e-8


def test_psi_derivative_against_finite_difference(e1):
    for t in (-1.0, 0.3, 2.0):
        h = 1e-5
        fd = (e1.psi(t + h) - e1.psi(t - h)) / (2 * h)
        assert e1.psi_derivatives(t)[1] == pytest.approx(fd, abs=1e-7)
    assert abs(e1.psi_derivatives(0.5)[1]) < 1e-12


def test_t_star(e1):
    assert e1.t_star(0.0) == math.inf
    assert e1.t_star(0.6) == pytest.approx(T_STAR_06_C1, abs=1e-9)
    q1 = 1 / e1.moment(1.5)
    assert e1.t_star(q1) == pytest.approx(1.5, abs=1e-9)
    q1 = 1.01 / e1.xi(0.5)
    assert 1 < e1.t_star(q1) < 1.5
    with pytest.raises(ValueError):
        e1.t_star(1.0)


@pytest.mark.parametrize("c", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("q1", [0.1, 0.3, 0.6])
def test_lambda_measure_identity(c, q1):
    e = MomentEngine.for_c(c)
    assert abs(e.lambda_measure(q1) - (e.t_star(q1) - 0.5)) < 1e-8


def test_lambda_vs_xi_criterion():
    for c in (0.5, 1.0, 2.0):
        e = MomentEngine.for_c(c)
        for q1 in np.linspace(0.05, 0.95, 10):
            assert (e.lambda_measure(q1) > 1) == (q1 * e.xi(0.5) < 1)
    assert MomentEngine.for_c(1.0).lambda_measure(0.0) == math.inf


def test_ldp_sup(e1):
    res = e1.ldp_sup_check(0.6)
    t_star = e1.t_star(0.6)
    assert abs(res.value - (0.5 - t_star)) < 1e-3
    assert res.z1 == pytest.approx(0.5, abs=1e-3)
    assert res.z == pytest.approx(e1.psi_derivatives(t_star)[1], rel=1e-2)
    assert isinstance(res.value, float)


def test_ldp_requires_interior_q1(e1):
    with pytest.raises(ValueError):
        e1.ldp_sup_check(0.0)


def test_numerical_error_carries_diagnostics():
    err = NumericalError("x", t=1.0)
    assert err.diagnostics == {"t": 1.0}


@settings(max_examples=40, deadline=None)
@given(c=st.floats(0.2, 6.0), t=st.floats(-4.0, 5.0))
def test_symmetry_property(c, t):
    e = MomentEngine.for_c(c)
    assert abs(e.psi(t) - e.psi(1 - t)) < 1e-9


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.3, 5.0), t=st.floats(-3.0, 3.0), s=st.floats(-3.0, 3.0))
def test_midpoint_convexity_property(c, t, s):
    e = MomentEngine.for_c(c)
    assert e.psi(0.5 * (t + s)) <= 0.5 * (e.psi(t) + e.psi(s)) + 1e-9
