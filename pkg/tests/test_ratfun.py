import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from escape.errors import DegenerateLeadingCoefficient, MultipleRootsDetected, NonFinite
from escape.model import DoubleExponential, Exponential, ExponentialNegative, Hypoexponential, Laplace
from escape.ratfun import (
    ExpPoly,
    RationalTransform,
    bromwich_invert,
    exppoly_calc,
    initial_data,
    invert_rational,
    lundberg_roots,
    pmul,
    poly_roots,
)
from escape import analytic

from conftest import make


def _sorted(rs):
    return sorted(((complex(r), m) for r, m in rs), key=lambda t: (t[0].real, t[0].imag))


# ---------------------------------------------------------------- roots

def test_roots_of_s2_minus_1():
    rs = _sorted(poly_roots([-1.0, 0.0, 1.0]))
    assert [m for _, m in rs] == [1, 1]
    assert rs[0][0] == pytest.approx(-1.0, abs=1e-14)
    assert rs[1][0] == pytest.approx(1.0, abs=1e-14)


def test_double_root_is_merged():
    rs = list(poly_roots([9.0, 6.0, 1.0]))
    assert len(rs) == 1
    assert rs[0][1] == 2
    assert rs[0][0] == pytest.approx(-3.0, abs=1e-10)


def test_lundberg_laplace_quadratic_roots():
    rho = gamma = 1.0
    rs = _sorted(poly_roots([rho * (rho - 2 * gamma), gamma - 2 * rho, 1.0]))
    assert rs[0][0].real == pytest.approx((1 - math.sqrt(5)) / 2, abs=1e-13)
    assert rs[1][0].real == pytest.approx((1 + math.sqrt(5)) / 2, abs=1e-13)


def test_zero_leading_coefficient_rejected():
    with pytest.raises(DegenerateLeadingCoefficient):
        poly_roots([1.0, 2.0, 0.0])
    with pytest.raises(DegenerateLeadingCoefficient):
        poly_roots([3.0])


def test_close_but_distinct_roots_stay_apart():
    rs = poly_roots(np.polynomial.polynomial.polyfromroots([-1.0, -1.0001]))
    assert rs.is_simple()


def test_quadruple_root():
    rs = list(poly_roots(np.polynomial.polynomial.polyfromroots([-1.0] * 4)))
    assert rs == [(pytest.approx(-1.0, abs=1e-8), 4)]


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=6))
def test_root_residuals(roots):
    c = np.polynomial.polynomial.polyfromroots(roots)
    rs = poly_roots(c)
    assert rs.degree == len(roots)
    norm = np.linalg.norm(c)
    for r, _ in rs:
        assert abs(np.polynomial.polynomial.polyval(r, c)) <= 1e-8 * max(norm, 1.0)


# ---------------------------------------------------------------- initial data

def test_initial_data_exponential():
    assert initial_data(RationalTransform((2.5, 1.0), (2.5,))) == pytest.approx([2.5])


def test_initial_data_hypoexponential():
    arr = Hypoexponential((1.0, 2.0, 4.0))
    f0 = initial_data(arr.transform())
    assert f0 == pytest.approx([0.0, 0.0, 8.0], abs=1e-14)


def test_initial_data_hyperexponential():
    p, l1, l2 = 0.3, 1.0, 2.0
    rt = RationalTransform((l1 * l2, l1 + l2, 1.0), (l1 * l2, p * l1 + (1 - p) * l2))
    assert initial_data(rt)[0] == pytest.approx(p * l1 + (1 - p) * l2, abs=1e-14)


@given(st.integers(1, 5), st.data())
def test_initial_data_leading_zeros(n, data):
    # density of a mixture of hypoexponentials has deg R = m < n; f0 has n-m-1 leading zeros
    m = data.draw(st.integers(0, n - 1))
    rates = sorted(data.draw(st.lists(st.floats(0.5, 5.0), min_size=n, max_size=n, unique=True)))
    Q = pmul(*[[r, 1.0] for r in rates]).real
    R = np.zeros(m + 1)
    R[-1] = data.draw(st.floats(0.1, 2.0))
    R[0] = Q[0]
    f0 = initial_data(RationalTransform(tuple(Q), tuple(R)))
    k = n - m - 1
    assert np.all(f0[:k] == 0)
    assert f0[k] != 0


@given(st.lists(st.floats(0.3, 6.0), min_size=2, max_size=4, unique=True))
def test_density_from_initial_data_matches_lagrange_form(rates):
    # f = sum c_i exp(-l_i t) with (f, f', ..., f^(n-1)) at 0+ taken from initial_data
    rates = np.array(sorted(rates))
    if min(np.diff(rates)) < 1e-2:
        return
    n = len(rates)
    f0 = initial_data(Hypoexponential(tuple(rates)).transform())
    V = np.vander(-rates, n, increasing=True).T
    coef = np.linalg.solve(V, f0)
    t = np.linspace(0.01, 10, 50)
    ode = sum(ci * np.exp(-li * t) for ci, li in zip(coef, rates))
    lag = sum(np.prod([r / (r - ri) for r in rates if r != ri]) * ri * np.exp(-ri * t) for ri in rates)
    assert np.max(np.abs(ode - lag)) <= 1e-9


# ---------------------------------------------------------------- inversion and algebra

def test_invert_simple_pole():
    f = invert_rational([1.0], [-0.7, 1.0])
    x = np.linspace(0, 3, 7)
    assert f(x) == pytest.approx(np.exp(0.7 * x), rel=1e-14)


def test_invert_two_poles():
    v = -0.4
    f = invert_rational([1.0], [0.0, -v, 1.0])
    assert len(f) == 2
    x = np.linspace(0, 3, 7)
    assert f(x) == pytest.approx((np.exp(v * x) - 1) / v, rel=1e-13)


def test_invert_three_pole_fundamental_solution_matches_contour():
    # lambda / (s (lambda q g / (g + s) - lambda + c s)) -> constant plus two exponentials
    lam, q, g, c = 1.0, 0.4, 1.0, 1.0
    num = [lam * g, lam]                      # lambda (g + s)
    den = pmul([0.0, 1.0], [lam * q * g - lam * g, c * g - lam, c]).real
    f = invert_rational(num, den)
    assert len(f) == 3
    x = np.array([0.5, 1.0, 2.0])
    ref = bromwich_invert(lambda s: lam * (g + s) / np.polynomial.polynomial.polyval(s, den), x, shift=1.0)
    assert f(x) == pytest.approx(ref, abs=1e-9)


def test_derivative_of_exponential():
    d = ExpPoly.term(1.0, 0.3).derivative()
    assert d(1.0) == pytest.approx(0.3 * math.exp(0.3))


def test_convolution_of_exponentials():
    a, b = -0.5, 1.2
    h = ExpPoly.term(1.0, a).convolve(ExpPoly.term(1.0, b))
    x = np.linspace(0, 2, 5)
    assert h(x) == pytest.approx((np.exp(a * x) - np.exp(b * x)) / (a - b), rel=1e-13, abs=1e-15)


def test_antiderivative_matches_quadrature():
    rho, q, g = 1.0, 0.4, 1.0
    den = pmul([0.0, 1.0], [q * g - g, 1 - rho, 1.0]).real
    pi = invert_rational([g, 1.0], den)
    P = exppoly_calc(pi, "antiderivative_from_0")
    assert P(0.0) == pytest.approx(0.0, abs=1e-15)
    for x in (0.3, 1.0, 2.5):
        ref = integrate.quad(pi, 0, x, epsabs=1e-13)[0]
        assert P(x) == pytest.approx(ref, abs=1e-8)


@given(st.floats(0.1, 10.0))
def test_derivative_matches_finite_differences(x):
    f = invert_rational([1.0, 0.5], pmul([1.0, 1.0], [2.0, 0.5, 1.0]).real)
    h = 1e-5
    fd = (f(x + h) - f(x - h)) / (2 * h)
    d = exppoly_calc(f, "derivative", 1)(x)
    assert d == pytest.approx(fd, rel=1e-6, abs=1e-10)


@given(st.integers(0, 10_000))
def test_inversion_round_trip(seed):
    rng = np.random.default_rng(seed)
    poles = -rng.uniform(0.3, 3.0, size=rng.integers(1, 4))
    den = np.polynomial.polynomial.polyfromroots(poles)
    num = rng.uniform(-1, 1, size=len(den) - 1)
    f = invert_rational(num, den)
    upper = 50 / min(abs(poles))
    for s in rng.uniform(0.1, 5.0, size=20):
        fwd = integrate.quad(lambda t: f(t) * math.exp(-s * t), 0, upper, limit=200, epsabs=1e-13)[0]
        ref = np.polynomial.polynomial.polyval(s, num) / np.polynomial.polynomial.polyval(s, den)
        assert fwd == pytest.approx(ref, rel=1e-7, abs=1e-12)


def test_evaluation_is_real_on_half_line():
    f = invert_rational([1.0], [2.0, 2.0, 1.0])      # poles -1 +- i
    assert f.imag_residual(np.linspace(0, 10, 101)) <= 1e-10


# ---------------------------------------------------------------- contour inversion

def test_bromwich_known_pairs():
    assert bromwich_invert(lambda s: 1 / (s + 1), 1.0) == pytest.approx(math.exp(-1), abs=1e-10)
    assert bromwich_invert(lambda s: 1 / s ** 2, 2.0) == pytest.approx(2.0, abs=1e-10)


def test_bromwich_gamma_half_against_erf_form():
    rho, gamma = 0.25, 1.0
    val = bromwich_invert(analytic.gamma_half_transform(rho, gamma), 1.0)
    m = 0.5 / gamma
    closed = analytic.gamma_half_scale(1.0, rho, gamma) / (1 - rho * m)
    assert val == pytest.approx(closed, abs=1e-7)


def test_bromwich_overflow():
    with pytest.raises(NonFinite):
        bromwich_invert(lambda s: np.exp(s ** 2), 1.0)


# ---------------------------------------------------------------- Lundberg roots

def test_lundberg_roots_laplace():
    rho, g = 1.0, 1.5
    rs = _sorted(lundberg_roots(make(1.0, Exponential(rho), Laplace(g))))
    disc = math.sqrt(rho ** 2 + 4 * g ** 2)
    assert [r.real for r, _ in rs] == pytest.approx([(rho - disc) / 2, 0.0, (rho + disc) / 2], abs=1e-12)


def test_lundberg_roots_exponential():
    rho, g = 1.0, 3.0
    rs = _sorted(lundberg_roots(make(1.0, Exponential(rho), ExponentialNegative(g))))
    assert [r.real for r, _ in rs] == pytest.approx([rho - g, 0.0], abs=1e-12)


def test_lundberg_roots_zero_drift_double_exponential():
    p, gp, gm = 0.3, 2.0, 1.0
    v = (1 - p) * gp - p * gm
    rs = _sorted(lundberg_roots(make(0.0, Exponential(1.0), DoubleExponential(p, gp, gm))))
    assert sorted(r.real for r, _ in rs) == pytest.approx(sorted([0.0, v]), abs=1e-12)


def test_lundberg_roots_confluent_raise():
    # rho = gamma gives a double root at 0
    with pytest.raises(MultipleRootsDetected):
        lundberg_roots(make(1.0, Exponential(2.0), ExponentialNegative(2.0)))
