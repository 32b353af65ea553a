import numpy as np
import pytest

from escape import Numerics, escape_probability, solve, sweep
from escape.errors import RangeError, RoutingMismatch
from escape.model import DoubleExponential, Erlang, EscapeQuery, Exponential, ExponentialNegative, SolverRoute

from conftest import make


def test_auto_uses_closed_form(poisson_exp):
    r = solve(poisson_exp, EscapeQuery(x=1.0, b=2.0))
    assert r.route is SolverRoute.PoissonOneSided
    assert r.probability == pytest.approx(0.8752890233594002, abs=1e-13)
    assert r.error_bound == 0.0


def test_translation(erlang_exp):
    p0 = escape_probability(erlang_exp, 1.0, 0.0, 2.0)
    for s in (-3.0, 0.25, 10.0):
        assert escape_probability(erlang_exp, 1.0 + s, s, 2.0 + s) == pytest.approx(p0, abs=1e-12)


def test_reflection():
    m = make(-1.0, Erlang(2, 1.0), DoubleExponential(0.3, 2.0, 1.0))
    r = solve(m, EscapeQuery(x=0.6, b=2.0))
    mirror = solve(m.reflected(), EscapeQuery(x=1.4, b=2.0))
    assert r.diagnostics["reflected"]
    assert r.probability == pytest.approx(1 - mirror.probability, abs=1e-12)


def test_fredholm_fallback_for_shifted_jumps():
    m = make(1.0, Erlang(2, 1.0), DoubleExponential(0.5, 1.0, 1.0, shift_pos=0.5))
    r = solve(m, EscapeQuery(x=1.0, b=2.0), Numerics(grid=400))
    assert r.route is SolverRoute.FredholmNumeric
    assert 0 < r.probability < 1 and r.error_bound > 0
    with pytest.raises(RoutingMismatch):
        solve(m, EscapeQuery(x=1.0, b=2.0, method="analytic"))


def test_analytic_failure_falls_back():
    # zero mean gain per unit time puts a double root of the Lundberg polynomial at 0
    m = make(1.0, Exponential(1.0), DoubleExponential(0.2, 1.0, 2 / 3))
    r = solve(m, EscapeQuery(x=1.0, b=2.0), Numerics(grid=800))
    assert r.diagnostics["natural_route"] == "PoissonRationalCF"
    assert r.diagnostics["analytic_failure"].startswith("MultipleRootsDetected")
    assert r.route is SolverRoute.FredholmNumeric
    est = solve(m, EscapeQuery(x=1.0, b=2.0, method="mc"), Numerics(paths=50_000))
    assert abs(r.probability - est.probability) <= 4 * est.stderr


def test_monte_carlo_when_not_contractive():
    m = make(0.0, Exponential(1.0), None, atoms=((0.5, 0.5), (-0.5, 0.5)))
    r = solve(m, EscapeQuery(x=1.0, b=3.0), Numerics(paths=20_000))
    assert r.route is SolverRoute.MonteCarloOnly
    assert r.stderr is not None
    # symmetric walk on a 0.5 lattice: 2 steps above 0, 4 steps below 3
    assert abs(r.probability - 2 / 6) <= 4 * r.stderr


def test_method_override(erlang_exp):
    q = dict(x=1.0, b=2.0)
    an = solve(erlang_exp, EscapeQuery(**q)).probability
    fr = solve(erlang_exp, EscapeQuery(method="fredholm", **q)).probability
    mc = solve(erlang_exp, EscapeQuery(method="mc", **q), Numerics(paths=50_000))
    assert abs(an - fr) <= 5e-4
    assert mc.route is SolverRoute.MonteCarloOnly and abs(mc.probability - an) <= 4 * mc.stderr


def test_history_forces_fredholm(erlang_exp):
    r = solve(erlang_exp, EscapeQuery(x=1.0, b=2.0, z=1.0))
    assert r.route is SolverRoute.FredholmNumeric
    p0 = solve(erlang_exp, EscapeQuery(x=1.0, b=2.0)).probability
    assert r.probability < p0


def test_sweep_shares_grid(erlang_exp):
    xs = np.linspace(0.2, 1.8, 5)
    res = sweep(erlang_exp, xs, 0.0, 2.0, method="fredholm", numerics=Numerics(grid=300))
    assert len(res) == 5
    assert all(np.diff([r.probability for r in res]) > 0)


def test_range_error():
    with pytest.raises(RangeError):
        escape_probability(make(1.0, Exponential(1.0), ExponentialNegative(1.0)), 3.0, 0.0, 2.0)
