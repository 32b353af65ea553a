"""Polynomial and rational-function algebra.

Polynomials are coefficient vectors in ascending order, ``c[0] + c[1] s + ...``.
The workhorse is :class:`ExpPoly`, a finite sum ``sum c x**k exp(r x)`` with
complex coefficients and rates; it is closed under differentiation,
integration, convolution and reflection, which is everything the
determinant solvers need.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly

from .errors import (
    DegenerateLeadingCoefficient,
    MassNotOne,
    MultipleRootsDetected,
    NonFinite,
    UnstableRationalTransform,
)

CLUSTER_TOL = 1e-8
_RATE_TOL = 1e-13


def _trim(c) -> np.ndarray:
    c = np.atleast_1d(np.asarray(c, dtype=complex))
    nz = np.nonzero(c)[0]
    if len(nz) == 0:
        return np.zeros(1, dtype=complex)
    return c[: nz[-1] + 1]


def _real_if_close(c, tol=1e-12):
    c = np.asarray(c)
    if np.iscomplexobj(c) and np.all(np.abs(c.imag) <= tol * (1.0 + np.abs(c.real))):
        return c.real.copy()
    return c


def pmul(*polys) -> np.ndarray:
    out = np.ones(1, dtype=complex)
    for p in polys:
        out = npoly.polymul(out, np.asarray(p, dtype=complex))
    return out


def padd(a, b) -> np.ndarray:
    return npoly.polyadd(np.asarray(a, dtype=complex), np.asarray(b, dtype=complex))


def pscale_arg(c, k: complex) -> np.ndarray:
    """Coefficients of p(k s) given those of p(s)."""
    c = np.asarray(c, dtype=complex)
    return c * k ** np.arange(len(c))


def taylor_shift(c, r: complex) -> np.ndarray:
    """Coefficients in t of p(r + t)."""
    c = np.asarray(c, dtype=complex)
    n = len(c)
    out = np.zeros(n, dtype=complex)
    for i in range(n):
        if c[i] == 0:
            continue
        for j in range(i + 1):
            out[j] += c[i] * math.comb(i, j) * r ** (i - j)
    return out


# ---------------------------------------------------------------- roots

@dataclass(frozen=True)
class RootSet:
    """Distinct roots with multiplicities."""

    roots: tuple

    @property
    def values(self) -> np.ndarray:
        return np.array([r for r, _ in self.roots], dtype=complex)

    @property
    def multiplicities(self) -> list[int]:
        return [m for _, m in self.roots]

    @property
    def degree(self) -> int:
        return sum(self.multiplicities)

    def is_simple(self) -> bool:
        return all(m == 1 for _, m in self.roots)

    def require_simple(self) -> "RootSet":
        if not self.is_simple():
            raise MultipleRootsDetected(
                f"roots with multiplicity > 1: {[r for r, m in self.roots if m > 1]}")
        return self

    def __iter__(self):
        return iter(self.roots)

    def __len__(self):
        return len(self.roots)


def _poly_scale(c) -> float:
    return float(np.max(np.abs(c)))


def _cluster_radius(mult: int, big: float) -> float:
    # roundoff splits a root of multiplicity mult by roughly eps**(1/mult)
    return max(CLUSTER_TOL, 10.0 * 1e-15 ** (1.0 / mult)) * big


def poly_roots(coeffs) -> RootSet:
    """All complex roots of a polynomial, with clustering of multiple roots."""
    c = np.asarray(coeffs, dtype=complex)
    if c.ndim != 1 or len(c) < 2:
        raise DegenerateLeadingCoefficient("polynomial must have degree >= 1")
    if c[-1] == 0:
        raise DegenerateLeadingCoefficient("leading coefficient is zero")
    scale = _poly_scale(c)
    # exact zero roots: strip vanishing low-order coefficients
    nzero = 0
    while nzero < len(c) - 1 and abs(c[nzero]) <= 1e-13 * scale:
        nzero += 1
    rest = c[nzero:]
    found: list[complex] = []
    if len(rest) > 1:
        found = [complex(z) for z in npoly.polyroots(rest)]
    # cluster
    vals = np.array(found, dtype=complex)
    groups: list[list[int]] = []
    if len(vals):
        big = 1.0 + np.max(np.abs(vals))
        loose = 1e-3 * big
        tight = CLUSTER_TOL * big
        unused = set(range(len(vals)))
        for i in range(len(vals)):
            if i not in unused:
                continue
            unused.discard(i)
            grp = [i]
            for j in sorted(unused):
                if abs(vals[j] - vals[i]) < loose:
                    grp.append(j)
            for j in grp[1:]:
                unused.discard(j)
            if len(grp) == 1:
                groups.append(grp)
                continue
            m = vals[grp].mean()
            spread = np.max(np.abs(vals[grp] - m))
            if spread < _cluster_radius(len(grp), big):
                groups.append(grp)
            else:
                # not a genuine multiple root; keep the tight sub-clusters only
                sub: list[list[int]] = []
                for j in grp:
                    for s in sub:
                        if abs(vals[j] - vals[s[0]]) < tight:
                            s.append(j)
                            break
                    else:
                        sub.append([j])
                groups.extend(sub)
    roots = []
    if nzero:
        roots.append((0j, nzero))
    dc = npoly.polyder(rest) if len(rest) > 1 else None
    for g in groups:
        z = complex(vals[g].mean())
        if len(g) == 1:
            # one Newton step for simple roots
            f = npoly.polyval(z, rest)
            d = npoly.polyval(z, dc)
            if d != 0:
                z2 = z - f / d
                if abs(npoly.polyval(z2, rest)) < abs(f):
                    z = complex(z2)
        roots.append((z, len(g)))
    return RootSet(tuple(roots))


# ---------------------------------------------------------------- exp-polynomials

class ExpPoly:
    """Finite sum of terms ``c * x**k * exp(r * x)``."""

    __slots__ = ("coef", "rate", "power")

    def __init__(self, coef=(), rate=(), power=(), canonical: bool = True):
        coef = np.asarray(coef, dtype=complex).ravel()
        rate = np.asarray(rate, dtype=complex).ravel()
        power = np.asarray(power, dtype=int).ravel()
        if not (len(coef) == len(rate) == len(power)):
            raise ValueError("coef, rate and power must have equal length")
        if np.any(power < 0):
            raise ValueError("powers must be nonnegative")
        self.coef, self.rate, self.power = coef, rate, power
        if canonical:
            self._canonicalize()

    # construction helpers
    @classmethod
    def zero(cls) -> "ExpPoly":
        return cls()

    @classmethod
    def constant(cls, c: complex) -> "ExpPoly":
        return cls([c], [0.0], [0])

    @classmethod
    def term(cls, coef: complex, rate: complex, power: int = 0) -> "ExpPoly":
        return cls([coef], [rate], [power])

    def _canonicalize(self):
        if len(self.coef) == 0:
            return
        order = np.lexsort((self.power, self.rate.imag, self.rate.real))
        c, r, k = self.coef[order], self.rate[order], self.power[order]
        oc, orr, ok = [], [], []
        for ci, ri, ki in zip(c, r, k):
            merged = False
            for idx in range(len(oc) - 1, -1, -1):
                if abs(orr[idx] - ri) > 1e-9 * (1 + abs(ri)):
                    break
                if ok[idx] == ki and abs(orr[idx] - ri) <= _RATE_TOL * (1 + abs(ri)):
                    oc[idx] += ci
                    merged = True
                    break
            if not merged:
                oc.append(ci)
                orr.append(ri)
                ok.append(ki)
        keep = [i for i, v in enumerate(oc) if v != 0]
        self.coef = np.array([oc[i] for i in keep], dtype=complex)
        self.rate = np.array([orr[i] for i in keep], dtype=complex)
        self.power = np.array([ok[i] for i in keep], dtype=int)

    def __len__(self):
        return len(self.coef)

    def terms(self):
        return zip(self.coef, self.rate, self.power)

    def __repr__(self):
        parts = [f"({c:.6g})x^{k}e^({r:.6g}x)" for c, r, k in self.terms()]
        return "ExpPoly(" + " + ".join(parts) + ")"

    # evaluation
    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if len(self.coef) == 0:
            return np.zeros(x.shape, dtype=complex)
        xe = x[..., None]
        vals = self.coef * xe ** self.power * np.exp(xe * self.rate)
        return vals.sum(axis=-1)

    def __call__(self, x):
        v = self.evaluate(x).real
        return float(v) if np.ndim(v) == 0 else v

    def imag_residual(self, x) -> float:
        return float(np.max(np.abs(self.evaluate(x).imag)))

    # arithmetic
    def __add__(self, other) -> "ExpPoly":
        if not isinstance(other, ExpPoly):
            other = ExpPoly.constant(other)
        return ExpPoly(np.r_[self.coef, other.coef], np.r_[self.rate, other.rate],
                       np.r_[self.power, other.power])

    __radd__ = __add__

    def __neg__(self) -> "ExpPoly":
        return ExpPoly(-self.coef, self.rate, self.power, canonical=False)

    def __sub__(self, other) -> "ExpPoly":
        if not isinstance(other, ExpPoly):
            other = ExpPoly.constant(other)
        return self + (-other)

    def __rsub__(self, other) -> "ExpPoly":
        return (-self) + other

    def __mul__(self, other) -> "ExpPoly":
        if isinstance(other, ExpPoly):
            if len(self) == 0 or len(other) == 0:
                return ExpPoly()
            c = np.multiply.outer(self.coef, other.coef).ravel()
            r = np.add.outer(self.rate, other.rate).ravel()
            k = np.add.outer(self.power, other.power).ravel()
            return ExpPoly(c, r, k)
        return ExpPoly(self.coef * other, self.rate, self.power)

    __rmul__ = __mul__

    def __truediv__(self, other) -> "ExpPoly":
        return self * (1.0 / other)

    def shift_rate(self, s: complex) -> "ExpPoly":
        """Multiply by exp(s x)."""
        return ExpPoly(self.coef, self.rate + s, self.power)

    def times_x(self, k: int = 1) -> "ExpPoly":
        return ExpPoly(self.coef, self.rate, self.power + k)

    # calculus
    def derivative(self, order: int = 1) -> "ExpPoly":
        f = self
        for _ in range(order):
            c = np.r_[f.coef * f.rate, (f.coef * f.power)[f.power > 0]]
            r = np.r_[f.rate, f.rate[f.power > 0]]
            k = np.r_[f.power, f.power[f.power > 0] - 1]
            f = ExpPoly(c, r, k)
        return f

    def antiderivative(self) -> "ExpPoly":
        """F(x) = integral of f over [0, x]."""
        cs, rs, ks = [], [], []
        for c, r, k in self.terms():
            if r == 0:
                cs.append(c / (k + 1))
                rs.append(0.0)
                ks.append(k + 1)
                continue
            fk = math.factorial(k)
            for j in range(k + 1):
                cs.append(c * (-1) ** (k - j) * fk / (math.factorial(j) * r ** (k - j + 1)))
                rs.append(r)
                ks.append(j)
            cs.append(-c * (-1) ** k * fk / r ** (k + 1))
            rs.append(0.0)
            ks.append(0)
        return ExpPoly(cs, rs, ks)

    def tail(self) -> "ExpPoly":
        """T(x) = integral of f over [x, inf); needs every rate in the open left half-plane."""
        if np.any(self.rate.real >= 0):
            raise ValueError("tail integral diverges: rate with nonnegative real part")
        a = self.antiderivative()
        keep = a.rate != 0
        return -ExpPoly(a.coef[keep], a.rate[keep], a.power[keep])

    def convolve(self, other: "ExpPoly") -> "ExpPoly":
        """(f * g)(x) = integral over [0, x] of f(t) g(x - t) dt."""
        cs, rs, ks = [], [], []
        for c1, r1, k1 in self.terms():
            for c2, r2, k2 in other.terms():
                w = c1 * c2 * math.factorial(k1) * math.factorial(k2)
                if abs(r1 - r2) <= _RATE_TOL * (1 + abs(r1)):
                    kk = k1 + k2 + 1
                    cs.append(w / math.factorial(kk))
                    rs.append(r1)
                    ks.append(kk)
                    continue
                K, M = k1 + 1, k2 + 1
                for i in range(1, K + 1):
                    a = (-1) ** (K - i) * math.comb(K + M - i - 1, K - i) / (r1 - r2) ** (K + M - i)
                    cs.append(w * a / math.factorial(i - 1))
                    rs.append(r1)
                    ks.append(i - 1)
                for j in range(1, M + 1):
                    bcoef = (-1) ** (M - j) * math.comb(K + M - j - 1, M - j) / (r2 - r1) ** (K + M - j)
                    cs.append(w * bcoef / math.factorial(j - 1))
                    rs.append(r2)
                    ks.append(j - 1)
        return ExpPoly(cs, rs, ks)

    def reflect(self, b: float) -> "ExpPoly":
        """The function x -> f(b - x)."""
        cs, rs, ks = [], [], []
        for c, r, k in self.terms():
            e = c * np.exp(r * b)
            for j in range(k + 1):
                cs.append(e * math.comb(k, j) * b ** (k - j) * (-1) ** j)
                rs.append(-r)
                ks.append(j)
        return ExpPoly(cs, rs, ks)

    # transforms
    def laplace(self, s):
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape, dtype=complex)
        for c, r, k in self.terms():
            out = out + c * math.factorial(k) / (s - r) ** (k + 1)
        return out

    def to_rational(self) -> tuple[np.ndarray, np.ndarray]:
        """(num, den) with laplace(s) == num(s) / den(s)."""
        groups: list[list] = []
        for c, r, k in self.terms():
            for g in groups:
                if abs(g[0] - r) <= _RATE_TOL * (1 + abs(r)):
                    g[1].append((c, k))
                    break
            else:
                groups.append([r, [(c, k)]])
        orders = [max(k for _, k in g[1]) + 1 for g in groups]
        factors = [npoly.polypow(np.array([-g[0], 1.0], dtype=complex), K)
                   for g, K in zip(groups, orders)]
        den = pmul(*factors) if factors else np.ones(1, dtype=complex)
        num = np.zeros(1, dtype=complex)
        for gi, (g, K) in enumerate(zip(groups, orders)):
            others = pmul(*[f for fi, f in enumerate(factors) if fi != gi])
            for c, k in g[1]:
                part = npoly.polypow(np.array([-g[0], 1.0], dtype=complex), K - k - 1)
                num = padd(num, c * math.factorial(k) * pmul(part, others))
        return _real_if_close(_trim(num)), _real_if_close(den)


# ---------------------------------------------------------------- rational inversion

def partial_fractions(num, den, roots: RootSet | None = None):
    """Expand num/den as sum over roots r of sum_j C[j] / (s - r)**(j + 1)."""
    num = _trim(num)
    den = _trim(den)
    if len(num) >= len(den) and np.any(num != 0):
        raise ValueError("numerator degree must be below denominator degree")
    if roots is None:
        roots = poly_roots(den)
    lead = den[-1]
    out = []
    items = list(roots)
    for idx, (r, mu) in enumerate(items):
        other = pmul(*[npoly.polypow(np.array([-o, 1.0], dtype=complex), mo)
                       for j, (o, mo) in enumerate(items) if j != idx]) * lead
        nt = taylor_shift(num, r)
        ot = taylor_shift(other, r)
        series = np.zeros(mu, dtype=complex)
        for j in range(mu):
            acc = nt[j] if j < len(nt) else 0.0
            for i in range(1, j + 1):
                if i < len(ot):
                    acc -= ot[i] * series[j - i]
            series[j] = acc / ot[0]
        # num/den = sum_j series[j] t**j / t**mu
        coeffs = np.array([series[mu - 1 - j] for j in range(mu)])
        out.append((r, coeffs))
    return out


def invert_rational(num, den, roots: RootSet | None = None) -> ExpPoly:
    """Exact inverse Laplace transform of a proper rational function."""
    cs, rs, ks = [], [], []
    for r, coeffs in partial_fractions(num, den, roots):
        for j, cj in enumerate(coeffs):
            cs.append(cj / math.factorial(j))
            rs.append(r)
            ks.append(j)
    return ExpPoly(cs, rs, ks)


def exppoly_calc(f: ExpPoly, op: str, arg=None):
    """Functional front end to the ExpPoly algebra."""
    if op == "eval":
        return f(arg)
    if op == "derivative":
        return f.derivative(1 if arg is None else int(arg))
    if op == "antiderivative_from_0":
        return f.antiderivative()
    if op == "convolve_with":
        return f.convolve(arg)
    raise ValueError(f"unknown op {op!r}")


# ---------------------------------------------------------------- rational transforms

@dataclass(frozen=True)
class RationalTransform:
    """R(s)/Q(s) with deg R < deg Q; coefficients ascending."""

    Q: tuple
    R: tuple

    def __post_init__(self):
        q = tuple(float(v) for v in np.atleast_1d(self.Q))
        r = tuple(float(v) for v in np.atleast_1d(self.R))
        while len(q) > 1 and q[-1] == 0:
            q = q[:-1]
        while len(r) > 1 and r[-1] == 0:
            r = r[:-1]
        object.__setattr__(self, "Q", q)
        object.__setattr__(self, "R", r)
        if len(q) < 2:
            raise ValueError("Q must have degree >= 1")
        if len(r) >= len(q):
            raise ValueError("deg R must be below deg Q")

    @property
    def n(self) -> int:
        return len(self.Q) - 1

    @property
    def m(self) -> int:
        return len(self.R) - 1

    def __call__(self, s):
        return npoly.polyval(s, np.asarray(self.R)) / npoly.polyval(s, np.asarray(self.Q))

    def monic(self) -> "RationalTransform":
        a = self.Q[-1]
        return RationalTransform(tuple(v / a for v in self.Q), tuple(v / a for v in self.R))

    def denominator_roots(self) -> RootSet:
        return poly_roots(self.Q)

    def check_coprime(self, tol: float = 1e-9) -> None:
        if self.m < 1:
            return
        rq = self.denominator_roots().values
        rr = poly_roots(self.R).values
        d = np.min(np.abs(rq[:, None] - rr[None, :]))
        if d < tol:
            raise ValueError("Q and R share a root")

    def validate_density(self) -> None:
        rq = self.denominator_roots().values
        if np.any(rq.real >= 0):
            raise UnstableRationalTransform(
                f"denominator roots must lie in Re s < 0, got {rq}")
        a0, b0 = self.Q[0], self.R[0]
        if abs(a0 - b0) > 1e-9 * max(abs(a0), 1e-300):
            raise MassNotOne(f"transform at 0 is {b0 / a0}, not 1")

    def density(self) -> ExpPoly:
        return invert_rational(self.R, self.Q)


def initial_data(rt: RationalTransform) -> np.ndarray:
    """Values f(0+), f'(0+), ..., f^(n-1)(0+) of the density with transform rt."""
    a = np.asarray(rt.Q, dtype=float)
    b = np.zeros(rt.n)
    b[: len(rt.R)] = rt.R
    n = rt.n
    f = np.zeros(n)
    # equation j involves f^(0..n-j-1); solve from j = n-1 downwards
    for j in range(n - 1, -1, -1):
        kmax = n - j - 1
        acc = b[j] - sum(a[j + k + 1] * f[k] for k in range(kmax))
        f[kmax] = acc / a[n]
    return f


# ---------------------------------------------------------------- numerical inversion

_TALBOT = (0.5017, 0.6407, 0.6122, 0.2645)


def bromwich_invert(transform: Callable, x, nodes: int = 48, shift: float = 0.0):
    """Inverse Laplace transform on a fixed deformed (Talbot-type) contour.

    Uses the cotangent contour with trapezoidal nodes; ``shift`` must exceed
    the real part of every singularity of ``transform``.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("x must be positive")
    a1, a2, a3, a4 = _TALBOT
    theta = -np.pi + (np.arange(nodes) + 0.5) * (2 * np.pi / nodes)
    z = nodes * (a1 * theta / np.tan(a2 * theta) - a3 + 1j * a4 * theta)
    dz = nodes * (a1 / np.tan(a2 * theta) - a1 * a2 * theta / np.sin(a2 * theta) ** 2 + 1j * a4)
    xe = x[..., None]
    s = shift + z / xe
    with np.errstate(all="ignore"):
        g = np.asarray(transform(s), dtype=complex)
        terms = np.exp(z + shift * xe) * g * dz / xe
    if not np.all(np.isfinite(terms)):
        raise NonFinite("transform evaluation overflowed on the contour")
    val = (terms.sum(axis=-1) / (1j * nodes)).real
    return float(val) if val.ndim == 0 else val


def lundberg_roots(model, b_context=None, *, require_simple: bool = True) -> RootSet:
    """Roots of the characteristic polynomial attached to a model."""
    poly = model.lundberg_polynomial(np.inf if b_context is None else b_context)
    rs = poly_roots(poly)
    if require_simple:
        rs.require_simple()
    return rs
