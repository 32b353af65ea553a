"""Closed-form and determinant solvers.

Every function here takes a model with c >= 0 and levels normalised to (0, b).
The fundamental solution ``pi`` is kept as an :class:`ExpPoly` whenever the
relevant transforms are rational, so derivatives, convolutions and boundary
values are exact up to roundoff.

Only the part of the jump law that the kernel actually sees matters: jumps at
or below -b always ruin and jumps at or above b always exit, so they enter the
equations as masses, not as densities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import special

from .errors import (
    ConditionViolated,
    MultipleRootsDetected,
    RoutingMismatch,
    SingularThetaAtB,
    UnsupportedSeverity,
)
from .model import (
    Erlang,
    Exponential,
    ExpPolyLaw,
    GammaHalfLaw,
    GenericSeverity,
    Hypoexponential,
    ProcessModel,
    decompose_jumps,
)
from .ratfun import (
    ExpPoly,
    RootSet,
    bromwich_invert,
    initial_data,
    invert_rational,
    pmul,
    poly_roots,
    pscale_arg,
)

_CONFLUENT = 1e-9


# ---------------------------------------------------------------- jump law seen from (0, b)

@dataclass
class _Side:
    kernel: Optional[ExpPoly] = None    # weighted density (magnitude variable), offset 0
    special: Optional[str] = None       # 'gamma_half' or 'generic' or 'shifted'
    special_law: object = None
    special_weight: float = 0.0
    atoms: list = field(default_factory=list)   # (magnitude, mass) strictly inside (0, b)
    far: float = 0.0                    # mass at magnitude >= b

    @property
    def inside_mass(self) -> float:
        m = sum(w for _, w in self.atoms) + self.special_weight
        if self.kernel is not None:
            m += float(self.kernel.tail()(0.0))
        return m

    @property
    def empty(self) -> bool:
        return self.kernel is None and self.special is None and not self.atoms

    @property
    def rational(self) -> bool:
        return self.special is None and not self.atoms

    @property
    def single_atom(self) -> bool:
        return self.kernel is None and self.special is None and len(self.atoms) == 1


def _sides(model: ProcessModel, b: float):
    """Negative and positive parts of the jump law relative to the interval (0, b)."""
    J = model.jumps
    neg, pos = _Side(), _Side()
    zero_atom = 0.0
    for loc, m in J.atoms:
        if m <= 0:
            continue
        if loc == 0:
            zero_atom += m
        elif loc <= -b:
            neg.far += m
        elif loc >= b:
            pos.far += m
        elif loc < 0:
            neg.atoms.append((-loc, m))
        else:
            pos.atoms.append((loc, m))
    fam = J.density
    if fam is not None and J.weight > 0:
        if isinstance(fam, GenericSeverity):
            w = J.weight
            pneg = float(fam.cdf(0.0))
            if pneg > 0:
                neg.special, neg.special_weight = "generic", w * pneg
            if pneg < 1:
                pos.special, pos.special_weight = "generic", w * (1 - pneg)
        else:
            p, plaw, q, nlaw = fam._parts()
            for side, law, wt in ((pos, plaw, p), (neg, nlaw, q)):
                if law is None or wt <= 0:
                    continue
                wt = wt * J.weight
                if law.offset >= b:
                    side.far += wt
                elif isinstance(law, GammaHalfLaw):
                    side.special, side.special_law, side.special_weight = "gamma_half", law, wt
                elif isinstance(law, ExpPolyLaw) and law.offset == 0:
                    side.kernel = law.density * wt
                else:
                    side.special, side.special_law, side.special_weight = "shifted", law, wt
    return neg, pos, zero_atom


def _clip01(v, diag=None):
    v = np.asarray(v, dtype=float)
    exc = float(np.max(np.maximum(-v, v - 1.0), initial=0.0))
    if diag is not None:
        diag["clamp_excursion"] = max(diag.get("clamp_excursion", 0.0), exc)
    out = np.clip(v, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def _hadamard(M: np.ndarray) -> float:
    return float(np.prod(np.linalg.norm(M, axis=1)))


def _equilibrated(M: np.ndarray) -> np.ndarray:
    # row and column scalings do not change whether M is singular
    E = np.array(M, dtype=float)
    for _ in range(3):
        r = np.linalg.norm(E, axis=1)
        E = E / np.where(r > 0, r, 1.0)[:, None]
        k = np.linalg.norm(E, axis=0)
        E = E / np.where(k > 0, k, 1.0)[None, :]
    return E


def _checked_det(M: np.ndarray, what: str) -> float:
    d = float(np.linalg.det(M))
    if not np.isfinite(d):
        raise SingularThetaAtB(f"{what}: determinant is not finite")
    E = _equilibrated(M)
    rel = abs(float(np.linalg.det(E))) / max(_hadamard(E), 1e-300)
    if rel < 1e-12:
        raise SingularThetaAtB(f"{what}: determinant {d:.3g} is negligible after equilibration ({rel:.3g})")
    return d


def _arrival_polys(arrivals):
    """Monic (Q, R) of the interarrival transform."""
    t = arrivals.transform()
    if t is None:
        return None
    t = t.monic()
    return np.asarray(t.Q, dtype=float), np.asarray(t.R, dtype=float), t


# ---------------------------------------------------------------- trivial case

def ep_trivial(model: ProcessModel, x, b: float):
    x = np.asarray(x, dtype=float)
    xs = np.atleast_1d(x)
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        sp = decompose_jumps(model, xi, b)
        if sp.p1 + sp.q1 > 1e-14:
            raise RoutingMismatch("jumps can land inside the interval (p1 + q1 > 0)")
        if model.c == 0:
            out[i] = sp.p2 / (sp.p2 + sp.q2) if sp.p2 + sp.q2 > 0 else 0.0
            continue
        tb = (b - xi) / model.c
        F = float(model.arrivals.cdf(tb))
        out[i] = float(model.arrivals.sf(tb)) + sp.p2 * F
    return float(out[0]) if x.ndim == 0 else out


def supports_trivial(model: ProcessModel, x: float, b: float) -> bool:
    sp = decompose_jumps(model, x, b)
    return sp.p1 + sp.q1 <= 1e-14


# ---------------------------------------------------------------- Poisson arrivals, downward jumps

def _constant_series(x, rho: float, y: float, m: float):
    """Fundamental solution for a single downward jump of size y carrying mass m."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(x.shape)
    for i, xi in enumerate(x):
        kmax = int(math.floor(xi / y + 1e-12))
        terms = [(-rho * m) ** k * (xi - k * y) ** k * math.exp(rho * (xi - k * y)) / math.factorial(k)
                 for k in range(kmax + 1)]
        out[i] = math.fsum(terms)
    return out


def gamma_half_scale(x, rho: float, gamma: float):
    """Closed form S(x) for Gamma(1/2, gamma) downward jumps (proportional to pi)."""
    x = np.asarray(x, dtype=float)
    root = math.sqrt(gamma * (gamma + 4 * rho))
    sp = (2 * rho - gamma + root) / 2
    sm = (2 * rho - gamma - root) / 2
    xp, xm = complex(sp + gamma), complex(sm + gamma)
    sq = np.sqrt
    t1 = 0.5 * (1 + special.erf(np.sqrt(gamma * x)))
    t2 = (np.exp(sp * x) * sm * xp.real * (sp - rho) - np.exp(sm * x) * sp * xm.real * (sm - rho)) / (
        2 * gamma * rho * (sm - sp))
    rxp, rxm = sq(xp), sq(xm)
    t3 = (rxm * sp * np.exp(sm * x) * special.erf(sq(x * xm + 0j))
          - rxp * sm * np.exp(sp * x) * special.erf(sq(x * xp + 0j))) / (2 * math.sqrt(gamma) * (sm - sp))
    return np.real(t1 + t2 + t3)


def gamma_half_transform(rho: float, gamma: float, weight: float = 1.0):
    def pihat(s):
        return 1.0 / ((weight * np.sqrt(gamma / (gamma + s)) - 1.0) * rho + s)
    return pihat


@dataclass
class PoissonPi:
    """Fundamental solution for Poisson arrivals and downward jumps."""

    kind: str
    rho: float
    exppoly: Optional[ExpPoly] = None
    atom: Optional[tuple] = None
    gamma: Optional[float] = None
    weight: float = 1.0
    nodes: int = 48

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "rational":
            return self.exppoly(x)
        if self.kind == "constant":
            v = _constant_series(x, self.rho, *self.atom)
        elif self.kind == "gamma_half":
            v = gamma_half_scale(x, self.rho, self.gamma)
        else:
            xs = np.atleast_1d(x)
            v = np.where(xs > 0, bromwich_invert(gamma_half_transform(self.rho, self.gamma, self.weight),
                                                 np.where(xs > 0, xs, 1.0), self.nodes, shift=2 * self.rho + 1.0),
                         1.0)
        v = np.asarray(v, dtype=float)
        return float(v.reshape(-1)[0]) if np.ndim(x) == 0 else np.reshape(v, x.shape)


def poisson_pi(model: ProcessModel, b: float = np.inf, nodes: int = 48) -> PoissonPi:
    if not isinstance(model.arrivals, Exponential) or model.c <= 0:
        raise RoutingMismatch("needs Poisson arrivals and positive drift")
    rho = model.rho
    neg, pos, zero = _sides(model, b)
    if not pos.empty or pos.far > 0 or zero > 0:
        raise RoutingMismatch("upward jumps present")
    if neg.rational:
        if neg.kernel is None:
            return PoissonPi("rational", rho, exppoly=ExpPoly.term(1.0, rho))
        Rk, Qk = neg.kernel.to_rational()
        D = npoly.polyadd(rho * npoly.polysub(Rk, Qk), npoly.polymulx(Qk))
        return PoissonPi("rational", rho, exppoly=invert_rational(Qk, D))
    if neg.single_atom:
        return PoissonPi("constant", rho, atom=neg.atoms[0])
    if neg.special == "gamma_half" and not neg.atoms and neg.kernel is None:
        if abs(neg.special_weight - 1.0) < 1e-15:
            return PoissonPi("gamma_half", rho, gamma=neg.special_law.rate)
        return PoissonPi("gamma_half_numeric", rho, gamma=neg.special_law.rate,
                         weight=neg.special_weight, nodes=nodes)
    raise UnsupportedSeverity("downward jump law is not rational, Gamma(1/2) or a single atom")


def supports_poisson_one_sided(model, x, b) -> bool:
    try:
        poisson_pi(model, b)
        return True
    except (RoutingMismatch, UnsupportedSeverity):
        return False


def ep_poisson_one_sided(model: ProcessModel, x, b: float, nodes: int = 48, diag=None):
    """pi(x) / pi(b)."""
    pi = poisson_pi(model, b, nodes)
    if pi.kind == "rational" and abs(pi.exppoly(0.0) - 1.0) > 1e-8:
        raise AssertionError("fundamental solution is not normalised at 0")
    return _clip01(pi(x) / pi(b), diag)


def survival_poisson(model: ProcessModel, x, nodes: int = 48):
    """Probability of never reaching 0 (b = infinity)."""
    rho = model.rho
    m = -model.jumps.mean
    if rho * m >= 1:
        return 0.0 if np.ndim(x) == 0 else np.zeros(np.shape(x))
    pi = poisson_pi(model, np.inf, nodes)
    if pi.kind == "gamma_half":
        return _clip01(pi(x))
    return _clip01((1 - rho * m) * pi(x))


# ---------------------------------------------------------------- rational interarrival transforms

def rational_arrivals_denominator(model: ProcessModel, b: float = np.inf) -> np.ndarray:
    """Numerator polynomial D of L(s) = D(s)/Q_h(s) for rational arrivals."""
    return _rational_arrivals_parts(model, b)[0]


def _rational_arrivals_parts(model, b):
    polys = _arrival_polys(model.arrivals)
    if polys is None or model.c <= 0:
        raise RoutingMismatch("needs rational interarrival transform and positive drift")
    Qf, Rf, _ = polys
    neg, pos, zero = _sides(model, b)
    if not neg.rational:
        raise UnsupportedSeverity("downward jumps must have an exp-polynomial density")
    kernel = neg.kernel if neg.kernel is not None else ExpPoly()
    if len(kernel):
        Rk, Qk = kernel.to_rational()
    else:
        Rk, Qk = np.zeros(1), np.ones(1)
    c = model.c
    D = npoly.polysub(npoly.polymul(pscale_arg(Qf, -c).real, Qk), npoly.polymul(pscale_arg(Rf, -c).real, Rk))
    return D, Qk, kernel, neg, pos, zero


@dataclass
class ThetaAssembly:
    n: int
    pi: list            # pi and derivatives 0 .. 2n-2, ExpPoly
    xi: np.ndarray      # xi_{-1} .. xi_{n-2}
    m_funcs: list       # m_i = pi^(i) * h, ExpPoly
    A: np.ndarray       # n x n boundary matrix
    cof: np.ndarray     # cofactors of the first row of Theta (x-independent)
    det_b: float

    def theta(self, x: float) -> np.ndarray:
        T = np.zeros((self.n + 1, self.n + 1))
        T[0, 1:] = [self.pi[i](x) for i in range(self.n)]
        T[1:, 0] = self.xi
        T[1:, 1:] = self.A
        return T

    def solution(self) -> ExpPoly:
        out = ExpPoly()
        for j in range(self.n):
            out = out + self.pi[j] * (self.cof[j] / self.det_b)
        return out

    def __call__(self, x):
        return self.solution()(x)


def theta_assembly(model: ProcessModel, b: float) -> ThetaAssembly:
    D, Qk, kernel, neg, pos, zero = _rational_arrivals_parts(model, b)
    if not pos.empty or pos.far > 0 or zero > 0:
        raise RoutingMismatch("upward jumps present")
    _, _, t = _arrival_polys(model.arrivals)
    n = t.n
    c = model.c
    pi0 = invert_rational(Qk, D)
    pis = [pi0]
    for _ in range(2 * n - 1):
        pis.append(pis[-1].derivative())
    f0 = initial_data(t)
    xi = np.array([-1.0] + [(-1.0 / c) ** (k + 1) * f0[k] for k in range(n - 1)])
    ms = [pis[i].convolve(kernel) if len(kernel) else ExpPoly() for i in range(n)]
    A = np.zeros((n, n))
    for i in range(n):
        A[0, i] = pis[i](b)
        for j in range(1, n):
            v = pis[i + j](b)
            for k in range(j):
                v -= xi[k + 1] * ms[i].derivative(j - k - 1)(b)
            A[j, i] = v
    T = np.zeros((n + 1, n + 1))
    T[0, 1:] = A[0]
    T[1:, 0] = xi
    T[1:, 1:] = A
    det_b = _checked_det(T, "Theta(b, b)")
    cof = np.zeros(n)
    for j in range(n):
        minor = np.delete(np.delete(T, 0, axis=0), j + 1, axis=1)
        cof[j] = (-1) ** (j + 1) * np.linalg.det(minor)
    return ThetaAssembly(n=n, pi=pis, xi=xi, m_funcs=ms, A=A, cof=cof, det_b=det_b)


def supports_rational_arrivals(model, x, b) -> bool:
    if model.c <= 0 or model.arrivals.transform() is None:
        return False
    try:
        _, _, kernel, neg, pos, zero = _rational_arrivals_parts(model, b)
    except (RoutingMismatch, UnsupportedSeverity):
        return False
    return pos.empty and pos.far == 0 and zero == 0


def ep_rational_arrivals(model: ProcessModel, x, b: float, diag=None):
    """det Theta(x, b) / det Theta(b, b)."""
    th = theta_assembly(model, b)
    if diag is not None:
        diag["det_theta_b"] = th.det_b
        diag["cond_A"] = float(np.linalg.cond(th.A))
    return _clip01(th(x), diag)


# ---------------------------------------------------------------- upward jumps that always exit

def _hypo_poly(arrivals):
    if isinstance(arrivals, Exponential):
        return np.array([arrivals.rate, 1.0])
    if isinstance(arrivals, Erlang):
        return npoly.polypow([arrivals.rate, 1.0], arrivals.shape)
    if isinstance(arrivals, Hypoexponential):
        return pmul(*[[r, 1.0] for r in arrivals.rates]).real
    return None


@dataclass
class UpperAssembly:
    n: int
    pi: list            # pi^(-1), pi, pi', ..., pi^(2n-2)
    pQ0: float
    A_b: np.ndarray
    det_b: float

    def A(self, x):
        M = self.A_b.copy()
        M[0] = [self.pi[1 + j](x) for j in range(self.n)]
        return M

    def B(self, x):
        n = self.n
        M = np.zeros((n + 1, n + 1))
        M[0] = [self.pi[j](x) for j in range(n + 1)]
        for k in range(n):
            M[k + 1] = [self.pi[k + j](self.b) for j in range(n + 1)]
        return M

    b: float = 0.0

    def __call__(self, x):
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.array([(np.linalg.det(self.A(v)) + self.pQ0 * np.linalg.det(self.B(v))) / self.det_b
                        for v in xs])
        return float(out[0]) if np.ndim(x) == 0 else out

    def solution(self) -> ExpPoly:
        """Same function as an ExpPoly: pQ0 pi_{-1} + sum alpha_j pi^(j)."""
        n = self.n
        G = np.array([[self.pi[1 + j + k](self.b) for j in range(n)] for k in range(n)])
        rhs = np.zeros(n)
        rhs[0] = 1.0
        rhs -= self.pQ0 * np.array([self.pi[k](self.b) for k in range(n)])
        alpha = np.linalg.solve(G, rhs)
        out = self.pi[0] * self.pQ0
        for j in range(n):
            out = out + self.pi[1 + j] * alpha[j]
        return out


def upper_assembly(model: ProcessModel, b: float) -> UpperAssembly:
    Q = _hypo_poly(model.arrivals)
    if Q is None or model.c <= 0:
        raise RoutingMismatch("needs (hypo)exponential arrivals and positive drift")
    neg, pos, zero = _sides(model, b)
    if not pos.empty or zero > 0:
        raise RoutingMismatch("some upward jumps can land inside (0, b)")
    if not neg.rational:
        raise UnsupportedSeverity("downward jumps must have an exp-polynomial density")
    p = pos.far
    n = len(Q) - 1
    c = model.c
    Q0 = Q[0]
    kernel = neg.kernel if neg.kernel is not None else ExpPoly()
    if len(kernel):
        Rk, Qk = kernel.to_rational()
    else:
        Rk, Qk = np.zeros(1), np.ones(1)
    D = npoly.polysub(npoly.polymul(pscale_arg(Q, -c).real, Qk), Q0 * np.asarray(Rk))
    pi = invert_rational(Qk, D)
    pis = [pi.antiderivative(), pi]
    for _ in range(2 * n - 1):
        pis.append(pis[-1].derivative())
    A_b = np.array([[pis[1 + i + j](b) for i in range(n)] for j in range(n)])
    det_b = _checked_det(A_b, "A(b, b)")
    return UpperAssembly(n=n, pi=pis, pQ0=p * Q0, A_b=A_b, det_b=det_b, b=b)


def supports_two_sided_upper(model, x, b) -> bool:
    if model.c <= 0 or _hypo_poly(model.arrivals) is None:
        return False
    neg, pos, zero = _sides(model, b)
    return pos.empty and zero == 0 and pos.far > 0 and neg.rational


def ep_two_sided_upper(model: ProcessModel, x, b: float, diag=None):
    """(det A(x,b) + p Q0 det B(x,b)) / det A(b,b)."""
    ua = upper_assembly(model, b)
    return _clip01(ua(x), diag)


# ---------------------------------------------------------------- no downward jumps inside

def _fixed_up_series(x, b, rho, y, p, q):
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(xs.shape)
    for i, xi in enumerate(xs):
        k1 = int(math.floor((b - xi) / y + 1e-12))
        acc = []
        for k in range(k1 + 1):
            xk = max(b - xi - k * y, 0.0)
            # P(Gamma(k+1, rho) <= xk)
            acc.append(p ** k * special.gammainc(k + 1, rho * xk) if xk > 0 else 0.0)
        out[i] = 1.0 - q * math.fsum(acc)
    return out if np.ndim(x) else float(out[0])


def lower_pi(model: ProcessModel, b: float) -> ExpPoly:
    """pi for the case without downward jumps in (-b, 0); N(x) = pi(b - x)."""
    polys = _arrival_polys(model.arrivals)
    neg, pos, zero = _sides(model, b)
    if polys is None:
        raise UnsupportedSeverity("interarrival transform is not rational")
    if not neg.empty or zero > 0 or pos.far > 0 or not pos.rational or pos.kernel is None:
        raise RoutingMismatch("needs exp-polynomial upward density and no downward jumps inside")
    Qf, Rf, _ = polys
    c = model.c
    q = neg.far
    p = float(pos.kernel.tail()(0.0))
    Rh, Qh = (pos.kernel / p).to_rational()
    Qfc = pscale_arg(Qf, c).real
    Rfc = pscale_arg(Rf, c).real
    D = npoly.polysub(npoly.polymul(Qh, Qfc), p * npoly.polymul(Rh, Rfc))
    num = npoly.polysub(D, q * npoly.polymul(Rfc, Qh))
    return invert_rational(num, npoly.polymulx(D))


def supports_two_sided_lower(model, x, b) -> bool:
    if model.c <= 0:
        return False
    neg, pos, zero = _sides(model, b)
    if not neg.empty or zero > 0:
        return False
    sp = decompose_jumps(model, x, b)
    if float(model.arrivals.cdf(b / model.c)) * sp.p1 >= 1:
        return False
    if pos.single_atom and pos.far == 0 and isinstance(model.arrivals, Exponential):
        return True
    return (pos.rational and pos.kernel is not None and pos.far == 0
            and model.arrivals.transform() is not None)


def ep_two_sided_lower(model: ProcessModel, x, b: float, diag=None):
    c = model.c
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    for xi in xs:
        sp = decompose_jumps(model, xi, b)
        if float(model.arrivals.cdf(b / c)) * sp.p1 >= 1:
            raise ConditionViolated("F(b/c) p1 >= 1")
    neg, pos, zero = _sides(model, b)
    if not neg.empty or zero > 0:
        raise RoutingMismatch("downward jumps can land inside (0, b)")
    if pos.single_atom and pos.far == 0:
        if not isinstance(model.arrivals, Exponential):
            raise UnsupportedSeverity("fixed upward jumps need Poisson arrivals")
        y, p = pos.atoms[0]
        v = _fixed_up_series(x, b, model.rho, y, p, neg.far)
        return _clip01(v, diag)
    pi = lower_pi(model, b)
    return _clip01(pi(b - np.asarray(x, dtype=float)), diag)


# ---------------------------------------------------------------- two-sided rational characteristic function

def _cf_parts(model: ProcessModel, b: float):
    """Weighted up/down kernels (ExpPoly), exit mass and ruin mass for a rational-CF law."""
    neg, pos, zero = _sides(model, b)
    if zero > 0 or neg.atoms or pos.atoms or neg.special or pos.special:
        raise UnsupportedSeverity("jump law inside (-b, b) is not a pure exp-polynomial density")
    eff = model.effective_cf(b)
    if eff is None:
        raise UnsupportedSeverity("jump law has no rational characteristic function")
    R, Q, p_up = eff
    hneg = neg.kernel if neg.kernel is not None else ExpPoly()
    hpos = pos.kernel if pos.kernel is not None else ExpPoly()
    w = model.jumps.weight
    return hneg, hpos, p_up, w, np.asarray(R, dtype=float), np.asarray(Q, dtype=float)


@dataclass
class CFSolution:
    N: ExpPoly
    roots: RootSet
    constant: float
    bc_residual: float
    b: float

    def __call__(self, x):
        return self.N(x)


def _cf_residual(phi: ExpPoly, hneg: ExpPoly, hpos: ExpPoly, inv_rho: float, b: float) -> ExpPoly:
    """phi - phi'/rho - int phi(x + y) h(y) dy over y in (-x, b - x)."""
    r = phi - phi.derivative() * inv_rho
    if len(hneg):
        r = r - phi.convolve(hneg)
    if len(hpos):
        r = r - phi.reflect(b).convolve(hpos).reflect(b)
    return r


def cf_solve(model: ProcessModel, b: float, allow_confluent: bool = True) -> CFSolution:
    """Exponential-basis solution of the escape equation for rational-CF jumps.

    The solution is sum beta x^p exp(s x) over the roots s of the
    characteristic polynomial (plus a constant when jumps can exit or ruin
    from anywhere). The coefficients make the equation's residual, which lies
    in an n-dimensional exp-polynomial space, vanish together with its first
    n - 1 derivatives at b; for c > 0 the condition N(b) = 1 closes the system.
    """
    c = model.c
    if c > 0 and not isinstance(model.arrivals, Exponential):
        raise RoutingMismatch("positive drift needs Poisson arrivals")
    hneg, hpos, p_up, w, R, Q = _cf_parts(model, b)
    n = len(Q) - 1
    inv_rho = 0.0 if c == 0 else 1.0 / model.rho
    ell = npoly.polysub(npoly.polymul([1.0, -inv_rho], Q) if c > 0 else Q, R)
    roots = poly_roots(ell)
    if not allow_confluent:
        roots.require_simple()
    basis = []
    for r, mu in roots:
        scale = np.exp(-r * b) if r.real > 0 else 1.0
        for p in range(mu):
            basis.append(ExpPoly.term(scale, r, p))
    # constant part when 0 is not a root
    if abs(npoly.polyval(0.0, ell)) > 1e-12 * np.max(np.abs(ell)):
        K = p_up / (1.0 - w)
    else:
        K = 0.0
    forcing = ExpPoly.constant(p_up)
    if len(hpos):
        forcing = forcing + hpos.tail().reflect(b)
    if K:
        forcing = forcing - _cf_residual(ExpPoly.constant(K), hneg, hpos, inv_rho, b)
    res = [_cf_residual(phi, hneg, hpos, inv_rho, b) for phi in basis]
    rows, rhs = [], []
    for j in range(n):
        rows.append([rr.derivative(j).evaluate(b) for rr in res])
        rhs.append(forcing.derivative(j).evaluate(b))
    if c > 0:
        rows.append([phi.evaluate(b) for phi in basis])
        rhs.append(1.0 - K)
    Amat = np.array(rows, dtype=complex)
    rhs = np.array(rhs, dtype=complex)
    if Amat.shape[0] != Amat.shape[1]:
        raise MultipleRootsDetected(f"boundary system is {Amat.shape}; root structure inconsistent")
    scale = np.prod(np.linalg.norm(Amat, axis=1))
    det = np.linalg.det(Amat)
    if abs(det) < 1e-13 * scale:
        raise SingularThetaAtB("boundary system for the exponential basis is singular")
    beta = np.linalg.solve(Amat, rhs)
    N = ExpPoly.constant(K)
    for bk, phi in zip(beta, basis):
        N = N + phi * bk
    resid = float(np.max(np.abs(Amat @ beta - rhs)))
    return CFSolution(N=N, roots=roots, constant=K, bc_residual=resid, b=b)


def cf_equation_residual(model: ProcessModel, sol: CFSolution, xs) -> float:
    """max |N - N'/rho - E[N(x + J)]| over xs, with exits counted as 1."""
    hneg, hpos, p_up, w, R, Q = _cf_parts(model, sol.b)
    inv_rho = 0.0 if model.c == 0 else 1.0 / model.rho
    r = _cf_residual(sol.N, hneg, hpos, inv_rho, sol.b)
    g = ExpPoly.constant(p_up)
    if len(hpos):
        g = g + hpos.tail().reflect(sol.b)
    return float(np.max(np.abs((r - g)(np.asarray(xs, dtype=float)))))


def supports_poisson_rational_cf(model, x, b) -> bool:
    if model.c <= 0 or not isinstance(model.arrivals, Exponential):
        return False
    try:
        _cf_parts(model, b)
        return True
    except UnsupportedSeverity:
        return False


def ep_poisson_rational_cf(model: ProcessModel, x, b: float, diag=None):
    sol = cf_solve(model, b, allow_confluent=False)
    if diag is not None:
        diag["bc_residual"] = sol.bc_residual
        diag["roots"] = [(complex(r), m) for r, m in sol.roots]
    return _clip01(sol(x), diag)


# ---------------------------------------------------------------- zero drift

def double_exponential_zero_drift(x, b, p, gp, gm):
    """Closed form for two-sided exponential jumps without drift."""
    x = np.asarray(x, dtype=float)
    q = 1 - p
    v = q * gp - p * gm
    if abs(v) < 1e-10:
        return gp * (gm * x + 1) / (gp + gm + b * gp * gm)
    return p * (gm - q * (gp + gm) * np.exp(v * x)) / (p * gm - q * gp * np.exp(v * b))


def _volterra_pi(kernel: ExpPoly, mass: float) -> ExpPoly:
    """Solution of g = mass + kernel * g on [0, inf) as an ExpPoly."""
    Rk, Qk = kernel.to_rational()
    den = npoly.polymulx(npoly.polysub(Qk, Rk))
    return invert_rational(mass * np.asarray(Qk), den)


def _zero_drift_kind(model: ProcessModel, b: float):
    neg, pos, zero = _sides(model, b)
    if zero > 0:
        return None
    if pos.empty and pos.far > 0 and (neg.rational or neg.single_atom):
        return "no_up_inside"
    if neg.empty and neg.far > 0 and (pos.rational or pos.single_atom):
        return "no_down_inside"
    if pos.empty and neg.empty:
        return "trivial"
    fam = model.jumps.density
    if (not model.jumps.atoms and fam is not None and type(fam).__name__ in ("DoubleExponential", "Laplace")
            and fam.rational_cf() is not None and 0 < fam.p < 1):
        return "double_exponential"
    try:
        _cf_parts(model, b)
        return "rational_cf"
    except UnsupportedSeverity:
        return None


def supports_zero_drift(model, x, b) -> bool:
    return model.c == 0 and _zero_drift_kind(model, b) is not None


def ep_zero_drift(model: ProcessModel, x, b: float, diag=None):
    if model.c != 0:
        raise RoutingMismatch("zero-drift solver called with c != 0")
    kind = _zero_drift_kind(model, b)
    x = np.asarray(x, dtype=float)
    neg, pos, zero = _sides(model, b)
    if diag is not None:
        diag["zero_drift_kind"] = kind
    if kind is None:
        raise UnsupportedSeverity("no closed form for this jump law without drift")
    if kind == "trivial":
        tot = pos.far + neg.far
        return _clip01(np.full(x.shape, pos.far / tot) if x.ndim else pos.far / tot)
    if kind == "no_up_inside":
        p = pos.far
        if neg.single_atom:
            y, m = neg.atoms[0]
            k = np.floor(x / y + 1e-12)
            return _clip01(p * (1 - m ** (k + 1)) / (1 - m) if m < 1 else p * (k + 1), diag)
        if neg.kernel is None:
            return _clip01(np.full(x.shape, p) if x.ndim else p, diag)
        return _clip01(_volterra_pi(neg.kernel, p)(x), diag)
    if kind == "no_down_inside":
        q = neg.far
        v = b - x
        if pos.single_atom:
            y, m = pos.atoms[0]
            k = np.ceil(v / y - 1e-12)        # jumps needed to reach b
            ruin = q * (1 - m ** k) / (1 - m) if m < 1 else q * k
            return _clip01(1 - ruin, diag)
        if pos.kernel is None:
            return _clip01(1 - q * np.ones_like(v), diag)
        return _clip01(1 - _volterra_pi(pos.kernel, q)(v), diag)
    fam = model.jumps.density
    if kind == "double_exponential":
        if isinstance(fam, type(fam)) and type(fam).__name__ == "Laplace":
            p, gp, gm = 0.5, fam.rate, fam.rate
        else:
            p, gp, gm = fam.p, fam.rate_pos, fam.rate_neg
        return _clip01(double_exponential_zero_drift(x, b, p, gp, gm), diag)
    sol = cf_solve(model, b)
    return _clip01(sol(x), diag)
