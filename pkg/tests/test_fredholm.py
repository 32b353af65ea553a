import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from escape import fredholm
from escape.errors import NotContractive, TailUnderflow
from escape.model import (
    DoubleExponential,
    Erlang,
    Exponential,
    ExponentialNegative,
    GenericDensity,
    Hypoexponential,
    Laplace,
    contraction_constant,
)

from conftest import make, exp_jump_ep


def test_trivial_support_matches_double_formula():
    # jumps either below -b or above b - x for every node: N = F(t_b)^c + p2 F(t_b)
    b = 2.0
    m = make(1.0, Erlang(2, 1.0), None, atoms=((-2.5, 0.6), (2.5, 0.4)))
    sol = fredholm.solve_fredholm(m, b, M=400)
    tb = (b - sol.nodes) / m.c
    F = m.arrivals.cdf(tb)
    assert np.max(np.abs(sol.values - (1 - F + 0.4 * F))) <= 1e-8


def test_all_jumps_ruin():
    b = 2.0
    m = make(1.0, Exponential(1.3), None, atoms=((-5.0, 1.0),))
    sol = fredholm.solve_fredholm(m, b, M=200)
    assert np.max(np.abs(sol.values - np.exp(-1.3 * (b - sol.nodes)))) <= 1e-12


def test_matches_poisson_closed_form(poisson_exp):
    sol = fredholm.solve_fredholm(poisson_exp, 2.0, M=2000)
    x = np.linspace(0, 2, 51)
    assert np.max(np.abs(sol(x) - exp_jump_ep(x, 2.0, 1.0, 2.0))) <= 1e-4


def test_not_contractive():
    m = make(0.0, Exponential(1.0), None, atoms=((0.5, 0.5), (-0.5, 0.5)))
    with pytest.raises(NotContractive):
        fredholm.solve_fredholm(m, 3.0)


def test_contraction_matches_model():
    m = make(1.0, Exponential(1.0), ExponentialNegative(1.0))
    assert fredholm.contraction(m, 2.0) == contraction_constant(m, 2.0)


def test_linear_order_also_converges(poisson_exp):
    sol = fredholm.solve_fredholm(poisson_exp, 2.0, M=1000, order=1)
    x = np.linspace(0, 2, 21)
    assert np.max(np.abs(sol(x) - exp_jump_ep(x, 2.0, 1.0, 2.0))) <= 1e-5


# ---------------------------------------------------------------- invariants

MODELS = {
    "poisson": lambda: make(1.0, Exponential(1.0), ExponentialNegative(2.0)),
    "erlang_dexp": lambda: make(1.0, Erlang(2, 1.0), DoubleExponential(0.3, 2.0, 1.0)),
    "hypo_atoms": lambda: make(0.7, Hypoexponential((1.0, 3.0)), ExponentialNegative(1.5),
                               atoms=((0.4, 0.2), (-0.3, 0.1))),
    "laplace": lambda: make(1.0, Exponential(2.0), Laplace(1.0)),
}


@pytest.mark.parametrize("name", sorted(MODELS))
def test_boundary_monotone_and_bounds(name):
    m = MODELS[name]()
    b = 2.0
    sol = fredholm.solve_fredholm(m, b, M=400)
    raw = sol.raw_values
    assert raw.min() >= -1e-9 and raw.max() <= 1 + 1e-9
    assert np.all(np.diff(raw) >= -1e-9)
    assert raw[-1] == pytest.approx(1.0, abs=1e-6)
    # 1 - F(t_b-) H((b - x)-) <= N <= 1 - F(t_b-) H(-b)
    x = sol.nodes[:-1]
    F = m.arrivals.cdf((b - x) / m.c)
    lo = 1 - F * m.jumps.cdf_left(b - x)
    hi = 1 - F * m.jumps.cdf(-b)
    assert np.all(raw[:-1] >= lo - 1e-9)
    assert np.all(raw[:-1] <= hi + 1e-9)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_complement(name):
    m = MODELS[name]()
    up = fredholm.solve_fredholm(m, 2.0, M=400, target="upper")
    low = fredholm.solve_fredholm(m, 2.0, M=400, target="lower")
    assert np.max(np.abs(up.raw_values + low.raw_values - 1)) <= 1e-8


def test_decreasing_in_b():
    m = MODELS["erlang_dexp"]()
    s1 = fredholm.solve_fredholm(m, 1.5, M=300)
    s2 = fredholm.solve_fredholm(m, 3.0, M=600)
    x = s1.nodes[1:-1]
    assert np.all(s1(x) >= s2(x) - 1e-8)


def test_zero_forcing_iterates_to_zero():
    m = MODELS["hypo_atoms"]()
    op = fredholm._assemble(m, 2.0, 200, 1, "upper")
    v = np.random.default_rng(1).uniform(-1, 1, 201)
    for _ in range(400):
        v = op.A @ v
    assert np.max(np.abs(v)) <= 1e-10


def test_picard_differences_contract():
    m = MODELS["laplace"]()
    sol = fredholm.solve_fredholm(m, 2.0, M=400)
    d = np.array(sol.diffs)
    d = d[d > 1e-14]
    assert np.all(d[1:] <= sol.L * d[:-1] * (1 + 1e-6))


@given(st.floats(0.3, 4.0), st.floats(0.5, 3.0))
def test_zero_drift_symmetric_severities(gamma, b):
    m = make(0.0, Exponential(1.0), Laplace(gamma))
    sol = fredholm.solve_fredholm(m, b, M=200)
    assert np.max(np.abs(sol.values + sol.values[::-1] - 1)) <= 1e-7


# ---------------------------------------------------------------- conditional

def test_conditional_zero_history_is_plain_solution(erlang_exp):
    sol = fredholm.solve_fredholm(erlang_exp, 2.0, M=400)
    assert fredholm.conditional_ep(erlang_exp, 2.0, 1.0, 0.0, solution=sol) == sol(1.0)


def test_conditional_memoryless():
    m = make(1.0, Exponential(1.0), ExponentialNegative(1.0))
    sol = fredholm.solve_fredholm(m, 2.0, M=400)
    for z in (0.5, 3.0):
        assert fredholm.conditional_ep(m, 2.0, 1.0, z, solution=sol) == pytest.approx(sol(1.0), abs=1e-10)


def test_conditional_tail_underflow(erlang_exp):
    sol = fredholm.solve_fredholm(erlang_exp, 2.0, M=200)
    with pytest.raises(TailUnderflow):
        fredholm.conditional_ep(erlang_exp, 2.0, 1.0, 1e4, solution=sol)


def test_generic_arrivals_match_named_family():
    # Erlang(2, 1) handed over as a bare density/cdf pair
    gen = GenericDensity(lambda t: np.where(np.asarray(t) >= 0, np.asarray(t) * np.exp(-np.asarray(t)), 0.0),
                         lambda t: 1 - (1 + np.maximum(t, 0)) * np.exp(-np.maximum(t, 0)))
    m1 = make(1.0, gen, ExponentialNegative(1.0))
    m2 = make(1.0, Erlang(2, 1.0), ExponentialNegative(1.0))
    s1 = fredholm.solve_fredholm(m1, 2.0, M=300)
    s2 = fredholm.solve_fredholm(m2, 2.0, M=300)
    assert np.max(np.abs(s1.values - s2.values)) <= 1e-6
