"""Process specification: drift, interarrival law and jump law.

Levels are normalised internally so that the lower barrier sits at 0.
Exit conventions: ruin when the path reaches a level <= a, upward exit
when it reaches a level >= b.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy import integrate, special

from .errors import MassNotOne, NonPositiveRate, RangeError, SchemaError, UnstableRationalTransform
from .ratfun import ExpPoly, RationalTransform, partial_fractions, pmul, poly_roots

MASS_TOL = 1e-6


def _arr(x):
    return np.asarray(x, dtype=float)


def _bisect_sf(sf, target, hi0=1.0, iters=64):
    """Vectorised solve of sf(t) = target for t >= 0, sf decreasing."""
    target = _arr(target)
    hi = np.full(target.shape, float(hi0))
    for _ in range(200):
        bad = sf(hi) > target
        if not np.any(bad):
            break
        hi = np.where(bad, hi * 2.0, hi)
    lo = np.zeros_like(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        up = sf(mid) > target
        lo = np.where(up, mid, lo)
        hi = np.where(up, hi, mid)
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# one-sided magnitude laws (building blocks for jumps and arrivals)

class ExpPolyLaw:
    """Law on [offset, inf) with exp-polynomial density in (u - offset)."""

    def __init__(self, density: ExpPoly, offset: float = 0.0):
        self.density = density
        self.offset = float(offset)
        self._D = density.antiderivative()
        self._T = density.tail()
        xd = density.times_x()
        self._X = xd.antiderivative()
        self._XT = xd.tail()
        self.mean = float(self._XT(0.0)) + self.offset
        c, r, k = density.coef, density.rate, density.power
        self._simple_rate = float(-r[0].real) if len(c) == 1 and k[0] == 0 and r[0].imag == 0 else None

    @property
    def is_exppoly(self) -> bool:
        return True

    def _s(self, u):
        return _arr(u) - self.offset

    def pdf(self, u):
        s = self._s(u)
        return np.where(s > 0, self.density(np.maximum(s, 0.0)), 0.0)

    def cdf(self, u):
        s = self._s(u)
        return np.where(s > 0, np.clip(self._D(np.maximum(s, 0.0)), 0.0, 1.0), 0.0)

    def sf(self, u):
        s = self._s(u)
        return np.where(s > 0, np.clip(self._T(np.maximum(s, 0.0)), 0.0, 1.0), 1.0)

    def m1(self, u):
        """Integral of t dP over [0, u]."""
        s = self._s(u)
        sp = np.maximum(s, 0.0)
        return np.where(s > 0, self._X(sp) + self.offset * self._D(sp), 0.0)

    def tail_mean(self, u):
        """Integral of t dP over [u, inf)."""
        s = self._s(u)
        sp = np.maximum(s, 0.0)
        return np.where(s > 0, self._XT(sp) + self.offset * self._T(sp), self.mean)

    def sample(self, u):
        """Inverse tail: returns t with P(T > t) = u."""
        u = _arr(u)
        if self._simple_rate is not None:
            return self.offset - np.log(u) / self._simple_rate
        slow = float(np.min(-self.density.rate.real))
        return self.offset + _bisect_sf(lambda t: self._T(t), u, hi0=10.0 / slow)


class GammaHalfLaw:
    """Gamma law with shape 1/2 and rate gamma."""

    is_exppoly = False

    def __init__(self, rate: float):
        self.rate = float(rate)
        self.offset = 0.0
        self.mean = 0.5 / self.rate

    def pdf(self, u):
        u = _arr(u)
        with np.errstate(divide="ignore", invalid="ignore"):
            v = np.sqrt(self.rate / (np.pi * u)) * np.exp(-self.rate * u)
        return np.where(u > 0, v, 0.0)

    def cdf(self, u):
        return special.gammainc(0.5, self.rate * np.maximum(_arr(u), 0.0))

    def sf(self, u):
        return special.gammaincc(0.5, self.rate * np.maximum(_arr(u), 0.0))

    def m1(self, u):
        return special.gammainc(1.5, self.rate * np.maximum(_arr(u), 0.0)) * self.mean

    def tail_mean(self, u):
        return special.gammaincc(1.5, self.rate * np.maximum(_arr(u), 0.0)) * self.mean

    def sample(self, u):
        return special.gammainccinv(0.5, _arr(u)) / self.rate


class CallableLaw:
    """Magnitude law given by user callables (used by negation of generic severities)."""

    is_exppoly = False

    def __init__(self, pdf, cdf, sampler=None):
        self._pdf, self._cdf, self._sampler = pdf, cdf, sampler
        self.offset = 0.0
        self.mean = integrate.quad(lambda t: t * pdf(t), 0, np.inf, limit=200)[0]

    def pdf(self, u):
        return np.vectorize(self._pdf, otypes=[float])(_arr(u))

    def cdf(self, u):
        return np.vectorize(self._cdf, otypes=[float])(_arr(u))

    def sf(self, u):
        return 1.0 - self.cdf(u)

    def m1(self, u):
        f = lambda v: integrate.quad(lambda t: t * self._pdf(t), 0, v, limit=200)[0] if v > 0 else 0.0
        return np.vectorize(f, otypes=[float])(_arr(u))

    def tail_mean(self, u):
        return self.mean - self.m1(u)

    def sample(self, u):
        if self._sampler is not None:
            return self._sampler(u)
        return _bisect_sf(self.sf, u)


# ---------------------------------------------------------------------------
# arrivals

class _ArrivalBase:
    slots = 1

    def transform(self) -> Optional[RationalTransform]:
        return None

    def sf(self, t):
        return 1.0 - self.cdf(t)

    def conditional_sample(self, u, z: float):
        """Sample from the residual law P(T > t + z) / P(T > z)."""
        z = float(z)
        sz = float(self.sf(z))
        return _bisect_sf(lambda t: self.sf(t + z) / sz, u, hi0=max(1.0, 2 * self.mean))


@dataclass(frozen=True)
class Exponential(_ArrivalBase):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")

    @property
    def mean(self):
        return 1.0 / self.rate

    def pdf(self, t):
        t = _arr(t)
        return np.where(t >= 0, self.rate * np.exp(-self.rate * np.maximum(t, 0)), 0.0)

    def cdf(self, t):
        return -np.expm1(-self.rate * np.maximum(_arr(t), 0.0))

    def sf(self, t):
        return np.exp(-self.rate * np.maximum(_arr(t), 0.0))

    def m1(self, t):
        lt = self.rate * np.maximum(_arr(t), 0.0)
        return (-np.expm1(-lt) - lt * np.exp(-lt)) / self.rate

    def laplace(self, s):
        return self.rate / (self.rate + s)

    def transform(self):
        return RationalTransform((self.rate, 1.0), (self.rate,))

    def sample(self, u):
        return -np.log(u[..., 0]) / self.rate

    def conditional_sample(self, u, z):
        return -np.log(u) / self.rate


@dataclass(frozen=True)
class Erlang(_ArrivalBase):
    shape: int
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")
        if int(self.shape) != self.shape or self.shape < 1:
            raise ValueError("Erlang shape must be a positive integer")

    @property
    def mean(self):
        return self.shape / self.rate

    def pdf(self, t):
        t = _arr(t)
        tp = np.maximum(t, 0.0)
        v = self.rate ** self.shape * tp ** (self.shape - 1) * np.exp(-self.rate * tp) / math.factorial(self.shape - 1)
        return np.where(t >= 0, v, 0.0)

    def cdf(self, t):
        return special.gammainc(self.shape, self.rate * np.maximum(_arr(t), 0.0))

    def sf(self, t):
        return special.gammaincc(self.shape, self.rate * np.maximum(_arr(t), 0.0))

    def m1(self, t):
        return self.mean * special.gammainc(self.shape + 1, self.rate * np.maximum(_arr(t), 0.0))

    def laplace(self, s):
        return (self.rate / (self.rate + s)) ** self.shape

    def transform(self):
        q = npoly.polypow([self.rate, 1.0], self.shape)
        return RationalTransform(tuple(q), (self.rate ** self.shape,))

    def sample(self, u):
        return special.gammainccinv(self.shape, u[..., 0]) / self.rate

    def conditional_sample(self, u, z):
        qz = special.gammaincc(self.shape, self.rate * z)
        return special.gammainccinv(self.shape, u * qz) / self.rate - z


class _RationalArrival(_ArrivalBase):
    """Arrival law handled through its exp-polynomial density."""

    def _law(self) -> ExpPolyLaw:
        law = self.__dict__.get("_law_cache")
        if law is None:
            law = ExpPolyLaw(self.transform().density())
            object.__setattr__(self, "_law_cache", law)
        return law

    @property
    def mean(self):
        return self._law().mean

    def pdf(self, t):
        return self._law().pdf(t)

    def cdf(self, t):
        return self._law().cdf(t)

    def sf(self, t):
        return self._law().sf(t)

    def m1(self, t):
        return self._law().m1(t)

    def laplace(self, s):
        return self.transform()(s)

    def sample(self, u):
        return self._law().sample(u[..., 0])


@dataclass(frozen=True)
class Hypoexponential(_RationalArrival):
    rates: tuple

    def __post_init__(self):
        r = tuple(sorted(float(v) for v in self.rates))
        if len(r) == 0 or r[0] <= 0:
            raise NonPositiveRate(f"rates must be positive, got {self.rates}")
        object.__setattr__(self, "rates", r)

    @property
    def slots(self):
        return len(self.rates)

    @property
    def mean(self):
        return float(sum(1.0 / r for r in self.rates))

    def transform(self):
        q = pmul(*[[r, 1.0] for r in self.rates]).real
        return RationalTransform(tuple(q), (float(np.prod(self.rates)),))

    def _law(self):
        law = self.__dict__.get("_law_cache")
        if law is None:
            # group equal rates so the inversion sees exact multiplicities
            vals, counts = np.unique(self.rates, return_counts=True)
            from .ratfun import RootSet, invert_rational
            rs = RootSet(tuple((complex(-v), int(m)) for v, m in zip(vals, counts)))
            t = self.transform()
            law = ExpPolyLaw(invert_rational(t.R, t.Q, rs))
            object.__setattr__(self, "_law_cache", law)
        return law

    def sample(self, u):
        return (-np.log(u) / np.asarray(self.rates)).sum(axis=-1)


@dataclass(frozen=True)
class RationalLT(_RationalArrival):
    rt: RationalTransform

    def __post_init__(self):
        self.rt.validate_density()

    def transform(self):
        return self.rt


@dataclass(frozen=True)
class GenericDensity(_ArrivalBase):
    """Interarrival law from a density and cdf evaluator on [0, inf)."""

    density: Callable
    distribution: Callable
    sampler: Optional[Callable] = None

    def __post_init__(self):
        mass = integrate.quad(self.density, 0, np.inf, limit=200)[0]
        if abs(mass - 1.0) > MASS_TOL:
            raise MassNotOne(f"interarrival density integrates to {mass}")
        mean = integrate.quad(lambda t: t * self.density(t), 0, np.inf, limit=200)[0]
        object.__setattr__(self, "_mean", mean)

    @property
    def mean(self):
        return self._mean

    def pdf(self, t):
        return np.vectorize(self.density, otypes=[float])(_arr(t))

    def cdf(self, t):
        return np.vectorize(lambda v: self.distribution(v) if v > 0 else 0.0, otypes=[float])(_arr(t))

    def m1(self, t):
        f = lambda v: integrate.quad(lambda s: s * self.density(s), 0, v, limit=200)[0] if v > 0 else 0.0
        return np.vectorize(f, otypes=[float])(_arr(t))

    def laplace(self, s):
        f = lambda v: integrate.quad(lambda t: np.exp(-v * t) * self.density(t), 0, np.inf, limit=200)[0]
        return np.vectorize(f, otypes=[float])(_arr(s))

    def sample(self, u):
        if self.sampler is not None:
            return self.sampler(u[..., 0])
        return _bisect_sf(self.sf, u[..., 0], hi0=max(1.0, 2 * self.mean))


ArrivalSpec = (Exponential, Erlang, Hypoexponential, RationalLT, GenericDensity)


# ---------------------------------------------------------------------------
# jump families: normalised laws of a single jump J

class JumpFamily:
    """Mixture of a positive magnitude law (weight p) and a negative one (weight q)."""

    pos = None
    neg = None

    @property
    def q(self):
        return 1.0 - self.p

    def _parts(self):
        return self.p, self.pos, self.q, self.neg

    def cdf(self, y):
        y = _arr(y)
        p, pos, q, neg = self._parts()
        out = np.zeros(y.shape)
        if neg is not None and q > 0:
            out = out + q * np.where(y < 0, neg.sf(-y), 1.0)
        if pos is not None and p > 0:
            out = out + p * pos.cdf(np.maximum(y, 0.0)) * (y >= 0)
        return out

    cdf_left = cdf  # no atoms in a density family

    def pdf(self, y):
        y = _arr(y)
        p, pos, q, neg = self._parts()
        out = np.zeros(y.shape)
        if neg is not None and q > 0:
            out = out + q * np.where(y < 0, neg.pdf(np.abs(y)), 0.0)
        if pos is not None and p > 0:
            out = out + p * np.where(y > 0, pos.pdf(np.abs(y)), 0.0)
        return out

    def m1(self, y):
        """Integral of t h(t) over (-inf, y]."""
        y = _arr(y)
        p, pos, q, neg = self._parts()
        out = np.zeros(y.shape)
        if neg is not None and q > 0:
            out = out - q * np.where(y < 0, neg.tail_mean(np.abs(y)), neg.mean)
        if pos is not None and p > 0:
            out = out + p * np.where(y > 0, pos.m1(np.maximum(y, 0.0)), 0.0)
        return out

    @property
    def mean(self):
        p, pos, q, neg = self._parts()
        m = 0.0
        if pos is not None and p > 0:
            m += p * pos.mean
        if neg is not None and q > 0:
            m -= q * neg.mean
        return m

    def sample(self, u_side, u_mag):
        p, pos, q, neg = self._parts()
        out = np.zeros(np.shape(u_side))
        up = u_side < p
        if pos is not None and np.any(up):
            out[up] = pos.sample(u_mag[up])
        if neg is not None and np.any(~up):
            out[~up] = -neg.sample(u_mag[~up])
        return out

    def rational_cf(self) -> Optional[tuple]:
        """(R, Q) with E exp(zJ) = R(z)/Q(z), or None."""
        return None

    def negated(self) -> "JumpFamily":
        return _Mirrored(self)

    @property
    def support(self) -> tuple:
        p, pos, q, neg = self._parts()
        lo = -np.inf if (neg is not None and q > 0) else (pos.offset if pos is not None else 0.0)
        hi = np.inf if (pos is not None and p > 0) else (-neg.offset if neg is not None else 0.0)
        return lo, hi


class _Mirrored(JumpFamily):
    def __init__(self, base: JumpFamily):
        self.base = base

    def _parts(self):
        p, pos, q, neg = self.base._parts()
        return q, neg, p, pos

    @property
    def p(self):
        return self.base.q

    @property
    def pos(self):
        return self.base.neg

    @property
    def neg(self):
        return self.base.pos

    def rational_cf(self):
        rc = self.base.rational_cf()
        if rc is None:
            return None
        R, Q = rc
        k = np.array([(-1.0) ** i for i in range(max(len(R), len(Q)))])
        return np.asarray(R) * k[: len(R)], np.asarray(Q) * k[: len(Q)]

    def negated(self):
        return self.base

    def __repr__(self):
        return f"Negated({self.base!r})"


def _exp_law(rate, offset=0.0):
    return ExpPolyLaw(ExpPoly.term(rate, -rate), offset)


@dataclass(frozen=True)
class ExponentialNegative(JumpFamily):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "neg", _exp_law(self.rate))

    p = 0.0
    pos = None

    def rational_cf(self):
        return np.array([self.rate]), np.array([self.rate, 1.0])


@dataclass(frozen=True)
class DoubleExponential(JumpFamily):
    """Positive part shift_pos + Exp(rate_pos) w.p. p, negative part shift_neg - Exp(rate_neg).

    Shifts are absolute levels (shift_pos >= 0 >= shift_neg).
    """

    p: float
    rate_pos: float
    rate_neg: float
    shift_pos: float = 0.0
    shift_neg: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.p <= 1.0):
            raise ValueError("p must lie in [0, 1]")
        if not (self.rate_pos > 0 and self.rate_neg > 0):
            raise NonPositiveRate("rates must be positive")
        if self.shift_pos < 0 or self.shift_neg > 0:
            raise ValueError("need shift_pos >= 0 >= shift_neg")
        object.__setattr__(self, "pos", _exp_law(self.rate_pos, self.shift_pos))
        object.__setattr__(self, "neg", _exp_law(self.rate_neg, -self.shift_neg))

    def rational_cf(self):
        if self.shift_pos != 0 or self.shift_neg != 0:
            return None
        gp, gm, p, q = self.rate_pos, self.rate_neg, self.p, self.q
        if p == 0:
            return np.array([gm]), np.array([gm, 1.0])
        if q == 0:
            return np.array([gp]), np.array([gp, -1.0])
        R = np.array([gm * gp, p * gp - q * gm])
        Q = np.array([gp * gm, gp - gm, -1.0])
        return R, Q


@dataclass(frozen=True)
class Laplace(JumpFamily):
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")
        law = _exp_law(self.rate)
        object.__setattr__(self, "pos", law)
        object.__setattr__(self, "neg", law)

    p = 0.5

    def rational_cf(self):
        g2 = self.rate ** 2
        return np.array([g2]), np.array([g2, 0.0, -1.0])


@dataclass(frozen=True)
class GammaHalfNegative(JumpFamily):
    """J = -G with G ~ Gamma(1/2, rate)."""

    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise NonPositiveRate(f"rate must be positive, got {self.rate}")
        object.__setattr__(self, "neg", GammaHalfLaw(self.rate))

    p = 0.0
    pos = None


@dataclass(frozen=True)
class RationalCF(JumpFamily):
    """Jump law with characteristic function E exp(zJ) = R(z)/Q(z)."""

    rt: RationalTransform

    def __post_init__(self):
        Q = np.asarray(self.rt.Q)
        R = np.asarray(self.rt.R)
        rs = poly_roots(Q)
        if np.any(np.abs(rs.values.real) <= 1e-12 * (1 + np.abs(rs.values))):
            raise UnstableRationalTransform("pole on the imaginary axis")
        if abs(Q[0] - R[0]) > 1e-9 * abs(Q[0]):
            raise MassNotOne(f"R(0)/Q(0) = {R[0] / Q[0]}, not 1")
        pos_t, neg_t = ([], [], []), ([], [], [])
        for r, C in partial_fractions(R, Q, rs):
            for k, ck in enumerate(C):
                if r.real > 0:
                    pos_t[0].append((-1) ** (k + 1) * ck / math.factorial(k))
                    pos_t[1].append(-r)
                    pos_t[2].append(k)
                else:
                    neg_t[0].append(ck / math.factorial(k))
                    neg_t[1].append(r)
                    neg_t[2].append(k)
        dpos = ExpPoly(*pos_t)
        dneg = ExpPoly(*neg_t)
        wp = float(dpos.tail()(0.0)) if len(dpos) else 0.0
        wn = float(dneg.tail()(0.0)) if len(dneg) else 0.0
        if abs(wp + wn - 1.0) > 1e-8:
            raise MassNotOne(f"density mass {wp + wn}")
        object.__setattr__(self, "p", wp)
        object.__setattr__(self, "pos", ExpPolyLaw(dpos / wp) if wp > 0 else None)
        object.__setattr__(self, "neg", ExpPolyLaw(dneg / wn) if wn > 0 else None)

    def rational_cf(self):
        return np.asarray(self.rt.R, dtype=float), np.asarray(self.rt.Q, dtype=float)


@dataclass(frozen=True)
class GenericSeverity(JumpFamily):
    """Jump law from density and cdf callables on the real line."""

    density: Callable
    distribution: Callable
    sampler: Optional[Callable] = None

    def __post_init__(self):
        mass = integrate.quad(self.density, -np.inf, np.inf, limit=200)[0]
        if abs(mass - 1.0) > MASS_TOL:
            raise MassNotOne(f"severity density integrates to {mass}")
        p = 1.0 - float(self.distribution(0.0))
        object.__setattr__(self, "p", p)

    def _parts(self):
        return self.p, None, 1.0 - self.p, None

    def cdf(self, y):
        return np.vectorize(self.distribution, otypes=[float])(_arr(y))

    cdf_left = cdf

    def pdf(self, y):
        return np.vectorize(self.density, otypes=[float])(_arr(y))

    def m1(self, y):
        f = lambda v: integrate.quad(lambda t: t * self.density(t), -np.inf, v, limit=200)[0]
        return np.vectorize(f, otypes=[float])(_arr(y))

    @property
    def mean(self):
        return integrate.quad(lambda t: t * self.density(t), -np.inf, np.inf, limit=200)[0]

    def sample(self, u_side, u_mag):
        if self.sampler is not None:
            return self.sampler(u_mag)
        # inverse cdf by bisection on a bracketing interval
        target = _arr(u_mag)
        lo = np.full(target.shape, -1.0)
        hi = np.full(target.shape, 1.0)
        for _ in range(200):
            m = self.cdf(lo) > target
            if not m.any():
                break
            lo = np.where(m, lo * 2, lo)
        for _ in range(200):
            m = self.cdf(hi) < target
            if not m.any():
                break
            hi = np.where(m, hi * 2, hi)
        for _ in range(64):
            mid = 0.5 * (lo + hi)
            below = self.cdf(mid) < target
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)

    def negated(self):
        s = self.sampler
        return GenericSeverity(lambda y: self.density(-y), lambda y: 1.0 - self.distribution(-y),
                               (lambda u: -s(u)) if s is not None else None)

    @property
    def support(self):
        return -np.inf, np.inf


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class JumpSpec:
    """Finite atom list plus an optional density family carrying the remaining mass."""

    atoms: tuple = ()
    density: Optional[JumpFamily] = None

    def __post_init__(self):
        atoms = tuple((float(loc), float(m)) for loc, m in self.atoms)
        for _, m in atoms:
            if m < 0 or m > 1:
                raise MassNotOne(f"atom mass {m} outside [0, 1]")
        object.__setattr__(self, "atoms", atoms)
        am = sum(m for _, m in atoms)
        if self.density is None and abs(am - 1.0) > MASS_TOL:
            raise MassNotOne(f"atoms carry mass {am} and there is no density")
        if am > 1.0 + MASS_TOL:
            raise MassNotOne(f"atoms carry mass {am} > 1")

    @property
    def atom_mass(self) -> float:
        return sum(m for _, m in self.atoms)

    @property
    def weight(self) -> float:
        """Mass carried by the density part."""
        if self.density is None:
            return 0.0
        return max(0.0, 1.0 - self.atom_mass)

    def cdf(self, y):
        y = _arr(y)
        out = np.zeros(y.shape)
        for loc, m in self.atoms:
            out = out + m * (y >= loc)
        if self.density is not None:
            out = out + self.weight * self.density.cdf(y)
        return out

    def cdf_left(self, y):
        y = _arr(y)
        out = np.zeros(y.shape)
        for loc, m in self.atoms:
            out = out + m * (y > loc)
        if self.density is not None:
            out = out + self.weight * self.density.cdf(y)
        return out

    def m1_cont(self, y):
        if self.density is None:
            return np.zeros(np.shape(y))
        return self.weight * self.density.m1(y)

    def mass(self, lo, hi, lo_closed=False, hi_closed=False) -> float:
        left = self.cdf(lo) if not lo_closed else self.cdf_left(lo)
        right = self.cdf(hi) if hi_closed else self.cdf_left(hi)
        return float(right - left)

    @property
    def mean(self) -> float:
        m = sum(loc * w for loc, w in self.atoms)
        if self.density is not None:
            m += self.weight * self.density.mean
        return m

    def negated(self) -> "JumpSpec":
        return JumpSpec(tuple((-loc, m) for loc, m in self.atoms),
                        self.density.negated() if self.density is not None else None)

    def support(self) -> tuple:
        locs = [loc for loc, m in self.atoms if m > 0]
        lo = min(locs) if locs else np.inf
        hi = max(locs) if locs else -np.inf
        if self.density is not None and self.weight > 0:
            dl, dh = self.density.support
            lo, hi = min(lo, dl), max(hi, dh)
        return lo, hi

    def sample(self, u):
        """u has three slots: atom choice, side choice, magnitude."""
        u0, u1, u2 = u[..., 0], u[..., 1], u[..., 2]
        out = np.zeros(u0.shape)
        acc = 0.0
        chosen = np.zeros(u0.shape, dtype=bool)
        for loc, m in self.atoms:
            hit = (~chosen) & (u0 < acc + m)
            out[hit] = loc
            chosen |= hit
            acc += m
        rest = ~chosen
        if self.density is not None and np.any(rest):
            out[rest] = self.density.sample(u1[rest], u2[rest])
        elif np.any(rest):
            out[rest] = self.atoms[-1][0]
        return out


# ---------------------------------------------------------------------------

class SolverRoute(enum.Enum):
    TrivialDouble = "TrivialDouble"
    PoissonOneSided = "PoissonOneSided"
    RationalArrivalsOneSided = "RationalArrivalsOneSided"
    TwoSidedUpper = "TwoSidedUpper"
    TwoSidedLower = "TwoSidedLower"
    PoissonRationalCF = "PoissonRationalCF"
    ZeroDrift = "ZeroDrift"
    FredholmNumeric = "FredholmNumeric"
    MonteCarloOnly = "MonteCarloOnly"


class NetProfit(enum.Enum):
    Holds = "Holds"
    Fails = "Fails"
    Boundary = "Boundary"


@dataclass(frozen=True)
class ProcessModel:
    c: float
    arrivals: object
    jumps: JumpSpec
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def rho(self) -> Optional[float]:
        if isinstance(self.arrivals, Exponential) and self.c != 0:
            return self.arrivals.rate / self.c
        return None

    @property
    def has_densities(self) -> bool:
        return self.jumps.density is not None and not self.jumps.atoms

    def reflected(self) -> "ProcessModel":
        return ProcessModel(-self.c, self.arrivals, self.jumps.negated())

    def t_b(self, x, b):
        return (b - _arr(x)) / self.c

    def effective_cf(self, b: float) -> Optional[tuple]:
        """Rational CF of the jump law seen by the kernel on (0, b).

        Atoms at or below -b (certain ruin) and at or above b (certain exit) are
        allowed; they leave the density with sub-unit weight. Returns
        (R_eff, Q, p_up) or None.
        """
        if self.jumps.density is None:
            return None
        rc = self.jumps.density.rational_cf()
        if rc is None:
            return None
        p_up = 0.0
        for loc, m in self.jumps.atoms:
            if loc >= b:
                p_up += m
            elif loc <= -b:
                pass
            elif m > 0:
                return None
        R, Q = rc
        return np.asarray(R) * self.jumps.weight, np.asarray(Q), p_up

    def lundberg_polynomial(self, b: float = np.inf) -> np.ndarray:
        """Characteristic polynomial whose roots give the exponential basis."""
        if isinstance(self.arrivals, Exponential) and self.c >= 0:
            eff = self.effective_cf(b)
            if eff is None:
                raise ValueError("jump law has no rational characteristic function")
            R, Q, _ = eff
            if self.c == 0:
                return npoly.polysub(Q, R)
            rho = self.rho
            return npoly.polysub(npoly.polymul([1.0, -1.0 / rho], Q), R)
        t = self.arrivals.transform()
        if t is None or self.c <= 0:
            raise ValueError("no characteristic polynomial for this model")
        from .analytic import rational_arrivals_denominator
        return rational_arrivals_denominator(self, b)


def build_model(c: float, arrivals, jumps: JumpSpec) -> ProcessModel:
    """Validate components and record structural flags."""
    if not isinstance(arrivals, ArrivalSpec):
        raise TypeError(f"unsupported arrival spec {arrivals!r}")
    if not isinstance(jumps, JumpSpec):
        raise TypeError("jumps must be a JumpSpec")
    t = arrivals.transform()
    if t is not None:
        t.validate_density()
    diag = {
        "arrival_density": True,
        "jump_density": jumps.density is not None,
        "jump_atoms": len(jumps.atoms),
    }
    return ProcessModel(float(c), arrivals, jumps, diag)


# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EscapeQuery:
    x: float
    a: float = 0.0
    b: float = 1.0
    z: float = 0.0
    method: str = "auto"

    def __post_init__(self):
        if not (self.a < self.x < self.b):
            raise RangeError(f"need a < x < b, got a={self.a}, x={self.x}, b={self.b}")
        if self.z < 0:
            raise RangeError("z must be nonnegative")
        if self.method not in ("auto", "fredholm", "analytic", "mc"):
            raise SchemaError(f"unknown method {self.method!r}")


@dataclass(frozen=True)
class JumpSplit:
    q1: float
    q2: float
    p1: float
    p2: float
    x: float
    b: float
    jumps: JumpSpec = field(repr=False)

    def total(self) -> float:
        return self.q1 + self.q2 + self.p1 + self.p2

    def _component(self, lo, hi, mass, lo_closed, hi_closed):
        if mass <= 0:
            return None
        J = self.jumps

        def cdf(y):
            y = _arr(y)
            yc = np.clip(y, lo, hi)
            if not np.isfinite(lo):
                base = 0.0
            else:
                base = J.cdf(lo) if not lo_closed else J.cdf_left(lo)
            v = (J.cdf(yc) - base) / mass
            v = np.where(y >= hi, 1.0, v)
            return np.clip(np.where(y < lo, 0.0, v), 0.0, 1.0)
        return cdf

    def component(self, name: str):
        b, x = self.b, self.x
        spec = {
            "H1-": (-b, 0.0, self.q1, False, False),
            "H2-": (-np.inf, -b, self.q2, False, True),
            "H1+": (0.0, b - x, self.p1, True, False),
            "H2+": (b - x, np.inf, self.p2, True, False),
        }[name]
        return self._component(*spec)


def decompose_jumps(model: ProcessModel, x: float, b: float) -> JumpSplit:
    """Split the jump law into the four pieces relevant at level x in (0, b)."""
    J = model.jumps
    q2 = float(J.cdf(-b))
    neg = float(J.cdf_left(0.0))
    below_exit = float(J.cdf_left(b - x))
    return JumpSplit(q1=neg - q2, q2=q2, p1=below_exit - neg, p2=1.0 - below_exit,
                     x=float(x), b=float(b), jumps=J)


def net_profit(model: ProcessModel) -> NetProfit:
    try:
        et = float(model.arrivals.mean)
        ej = float(model.jumps.mean)
    except Exception:
        return NetProfit.Fails
    if not (np.isfinite(et) and np.isfinite(ej)):
        return NetProfit.Fails
    v = model.c * et + ej
    if abs(v) < 1e-12:
        return NetProfit.Boundary
    return NetProfit.Holds if v > 0 else NetProfit.Fails


# ---------------------------------------------------------------------------
# routing

def contraction_constant(model: ProcessModel, b: float) -> float:
    inside = float(model.jumps.cdf_left(b) - model.jumps.cdf(-b))
    if model.c == 0:
        return inside
    return float(model.arrivals.cdf(b / abs(model.c))) * inside


def _normalise(model: ProcessModel, query: EscapeQuery):
    x, b = query.x - query.a, query.b - query.a
    if model.c < 0:
        return model.reflected(), b - x, b, True
    return model, x, b, False


def route(model: ProcessModel, query: EscapeQuery) -> SolverRoute:
    """Most specific solver for the query; reflects negative drift first."""
    m, x, b, _ = _normalise(model, query)
    return route_normalised(m, x, b)


def route_normalised(model: ProcessModel, x: float, b: float) -> SolverRoute:
    from . import analytic  # local import: analytic depends on this module

    split = decompose_jumps(model, x, b)
    if split.p1 <= 0 and split.q1 <= 0 and model.c > 0:
        return SolverRoute.TrivialDouble
    checks = [
        (SolverRoute.ZeroDrift, analytic.supports_zero_drift),
        (SolverRoute.TrivialDouble, analytic.supports_trivial),
        (SolverRoute.PoissonOneSided, analytic.supports_poisson_one_sided),
        (SolverRoute.RationalArrivalsOneSided, analytic.supports_rational_arrivals),
        (SolverRoute.TwoSidedUpper, analytic.supports_two_sided_upper),
        (SolverRoute.TwoSidedLower, analytic.supports_two_sided_lower),
        (SolverRoute.PoissonRationalCF, analytic.supports_poisson_rational_cf),
    ]
    for r, pred in checks:
        try:
            if pred(model, x, b):
                return r
        except Exception:
            continue
    if contraction_constant(model, b) < 1 - 1e-12:
        return SolverRoute.FredholmNumeric
    return SolverRoute.MonteCarloOnly
