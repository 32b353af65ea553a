"""Query front door: normalisation, reflection, routing and fallbacks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import analytic, fredholm
from .errors import (
    ConditionViolated,
    MultipleRootsDetected,
    NotContractive,
    RangeError,
    RoutingError,
    RoutingMismatch,
    SingularThetaAtB,
    UnsupportedSeverity,
)
from .model import EscapeQuery, Exponential, ProcessModel, SolverRoute, route_normalised


@dataclass
class Numerics:
    grid: int = 2000
    tol: float = 1e-10
    nodes: int = 48
    order: object = "auto"
    paths: int = 1_000_000
    seed: int = 12345
    workers: int = 1


@dataclass
class EscapeResult:
    probability: float
    error_bound: float
    route: SolverRoute
    diagnostics: dict = field(default_factory=dict)
    stderr: Optional[float] = None


_ANALYTIC = {
    SolverRoute.TrivialDouble: analytic.ep_trivial,
    SolverRoute.PoissonOneSided: analytic.ep_poisson_one_sided,
    SolverRoute.RationalArrivalsOneSided: analytic.ep_rational_arrivals,
    SolverRoute.TwoSidedUpper: analytic.ep_two_sided_upper,
    SolverRoute.TwoSidedLower: analytic.ep_two_sided_lower,
    SolverRoute.PoissonRationalCF: analytic.ep_poisson_rational_cf,
    SolverRoute.ZeroDrift: analytic.ep_zero_drift,
}

_FALLBACK_ERRORS = (UnsupportedSeverity, RoutingMismatch, ConditionViolated, SingularThetaAtB,
                    MultipleRootsDetected)


class _GridCache:
    """Keeps the last few Fredholm solutions so sweeps do not re-solve."""

    def __init__(self, size: int = 4):
        self.size = size
        self.items = []

    def get(self, model, b, num: Numerics):
        key = (id(model), float(b), num.grid, num.tol, num.order)
        for k, m, sol in self.items:
            if k == key and m is model:
                return sol
        sol = fredholm.solve_fredholm(model, b, M=num.grid, tol=num.tol, order=num.order)
        self.items.append((key, model, sol))
        if len(self.items) > self.size:
            self.items.pop(0)
        return sol


_cache = _GridCache()


def normalise(model: ProcessModel, query: EscapeQuery):
    """Shift to a = 0 and reflect negative drift. Returns (model, x, b, flipped)."""
    x, b = query.x - query.a, query.b - query.a
    if model.c < 0:
        return model.reflected(), b - x, b, True
    return model, x, b, False


def _history_matters(model: ProcessModel, z: float) -> bool:
    return z > 0 and model.c != 0 and not isinstance(model.arrivals, Exponential)


def _run_analytic(route, model, x, b, num, diag):
    fn = _ANALYTIC[route]
    if route is SolverRoute.TrivialDouble:
        return fn(model, x, b)
    if route is SolverRoute.PoissonOneSided:
        return fn(model, x, b, nodes=num.nodes, diag=diag)
    return fn(model, x, b, diag=diag)


def _run_fredholm(model, x, b, z, num, diag):
    sol = _cache.get(model, b, num)
    diag["iterations"] = sol.iterations
    diag["L"] = sol.L
    diag["order"] = sol.order
    if z > 0:
        return fredholm.conditional_ep(model, b, x, z, solution=sol), sol.error_bound
    return sol(x), sol.error_bound


def _run_mc(model, x, b, z, num, diag):
    from . import mc
    if z > 0:
        est = mc.estimate_conditional_ep(model, x, b, z, num.paths, num.seed, workers=num.workers)
    else:
        est = mc.estimate_ep(model, x, 0.0, b, num.paths, num.seed, workers=num.workers)
    diag["censored"] = est.censored
    return est


def solve(model: ProcessModel, query: EscapeQuery, numerics: Optional[Numerics] = None) -> EscapeResult:
    """Escape probability P(exit through b before a) for one query."""
    num = numerics or Numerics()
    m, x, b, flipped = normalise(model, query)
    diag = {"reflected": flipped}
    method = query.method
    z = query.z
    r = route_normalised(m, x, b)
    diag["natural_route"] = r.value
    stderr = None

    if method == "mc":
        est = _run_mc(m, x, b, z, num, diag)
        p, err, r, stderr = est.value, 4 * est.stderr, SolverRoute.MonteCarloOnly, est.stderr
    elif method == "fredholm":
        p, err = _run_fredholm(m, x, b, z, num, diag)
        r = SolverRoute.FredholmNumeric
    else:
        p = err = None
        if r in _ANALYTIC and not _history_matters(m, z):
            try:
                p = _run_analytic(r, m, x, b, num, diag)
                err = 0.0
            except _FALLBACK_ERRORS as exc:
                if method == "analytic":
                    raise
                diag["analytic_failure"] = f"{type(exc).__name__}: {exc}"
        elif method == "analytic":
            raise RoutingMismatch(f"no analytic route for this query (natural route {r.value})")
        if p is None:
            try:
                p, err = _run_fredholm(m, x, b, z, num, diag)
                r = SolverRoute.FredholmNumeric
            except NotContractive:
                est = _run_mc(m, x, b, z, num, diag)
                p, err, r, stderr = est.value, 4 * est.stderr, SolverRoute.MonteCarloOnly, est.stderr
    p = float(p)
    if flipped:
        p = 1.0 - p
    return EscapeResult(probability=p, error_bound=float(err), route=r, diagnostics=diag, stderr=stderr)


def escape_probability(model: ProcessModel, x: float, a: float = 0.0, b: float = 1.0, z: float = 0.0,
                       method: str = "auto", numerics: Optional[Numerics] = None) -> float:
    try:
        q = EscapeQuery(x=x, a=a, b=b, z=z, method=method)
    except ValueError as exc:
        raise RangeError(str(exc)) from None
    return solve(model, q, numerics).probability


def sweep(model: ProcessModel, xs, a: float, b: float, z: float = 0.0, method: str = "auto",
          numerics: Optional[Numerics] = None) -> list:
    """Solve on a grid of start levels; Fredholm solutions are shared across the grid."""
    out = []
    for x in np.asarray(xs, dtype=float):
        out.append(solve(model, EscapeQuery(x=float(x), a=a, b=b, z=z, method=method), numerics))
    return out


__all__ = ["Numerics", "EscapeResult", "solve", "sweep", "escape_probability", "normalise", "RoutingError"]
