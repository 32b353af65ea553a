"""Nystrom discretisation and Picard iteration of the escape-probability integral equation.

For c > 0 and levels normalised to (0, b) the unknown N satisfies

    N(x) = Fbar(t_b) + int_0^{t_b} [ P(J >= b - x - cl) + int N(x + cl + y) dH(y) ] dF(l)

with t_b = (b - x)/c and the inner integral over landings in (0, b). For c = 0
the outer integral disappears. N is represented by its values on a uniform
grid; between nodes it is interpolated locally (linear or cubic) and every
integral against F or H is done exactly in the interpolant, using
Gauss-Legendre cell moments of the densities.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.polynomial import legendre, polynomial as npoly
from scipy.linalg import toeplitz

from .errors import IterationCapExceeded, NotContractive, TailUnderflow
from .model import (
    Exponential,
    GammaHalfLaw,
    ProcessModel,
    contraction_constant,
)

_GL_X, _GL_W = legendre.leggauss(10)


# ---------------------------------------------------------------- local interpolation

def _lagrange(offsets) -> np.ndarray:
    """C[j, p]: coefficient of t**p in the Lagrange basis polynomial for node offsets[j]."""
    o = np.asarray(offsets, dtype=float)
    C = np.zeros((len(o), len(o)))
    for j in range(len(o)):
        others = np.delete(o, j)
        poly = npoly.polyfromroots(others) / np.prod(o[j] - others)
        C[j, : len(poly)] = poly
    return C


def _stencils(order: int, M: int):
    """List of (k_start, k_stop, offsets, C) covering cells 0..M-1."""
    if order == 1:
        return [(0, M, (0, 1), _lagrange((0, 1)))]
    if order == 3:
        if M < 3:
            raise ValueError("cubic interpolation needs M >= 3")
        return [
            (0, 1, (0, 1, 2, 3), _lagrange((0, 1, 2, 3))),
            (1, M - 1, (-1, 0, 1, 2), _lagrange((-1, 0, 1, 2))),
            (M - 1, M, (-2, -1, 0, 1), _lagrange((-2, -1, 0, 1))),
        ]
    raise ValueError("order must be 1 or 3")


def _point_weights(pos: np.ndarray, M: int, order: int):
    """Interpolation weights for N at fractional grid positions pos in [0, M].

    Returns (cols, w) with shapes (n, order+1).
    """
    k = np.clip(np.floor(pos).astype(int), 0, M - 1)
    t = pos - k
    cols, ws = [], []
    for k0, k1, offs, C in _stencils(order, M):
        sel = (k >= k0) & (k < k1)
        cols.append((sel, np.asarray(offs)))
        ws.append(C)
    n = len(pos)
    out_c = np.zeros((n, order + 1), dtype=int)
    out_w = np.zeros((n, order + 1))
    tp = t[:, None] ** np.arange(order + 1)
    for (sel, offs), C in zip(cols, ws):
        out_c[sel] = k[sel, None] + offs
        out_w[sel] = tp[sel] @ C.T
    return out_c, out_w


# ---------------------------------------------------------------- cell moments

def _gl_moments(pdf, lo, hi, base, width, P, sing_left=None, sing_right=None):
    """m[:, p] = int_lo^hi ((u - base)/width)**p pdf(u) du, by Gauss-Legendre.

    A square-root singularity at an endpoint is removed with u = end +/- s**2.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    n = lo.shape[0]
    out = np.zeros((n, P + 1))
    if n == 0:
        return out
    sl = np.zeros(n, bool) if sing_left is None else sing_left
    sr = np.zeros(n, bool) if sing_right is None else sing_right
    plain = ~(sl | sr)

    def acc(mask, u, jac):
        if not np.any(mask):
            return
        f = pdf(u) * jac
        t = (u - base[mask, None]) / width[mask, None]
        tp = np.ones_like(t)
        for p in range(P + 1):
            out[mask, p] += (f * tp) @ _GL_W
            tp = tp * t

    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    acc(plain, mid[plain, None] + half[plain, None] * _GL_X, half[plain, None])
    if np.any(sl):
        S = np.sqrt(hi[sl] - lo[sl])
        s = 0.5 * S[:, None] * (_GL_X + 1.0)
        acc(sl, lo[sl, None] + s ** 2, 2 * s * 0.5 * S[:, None])
    if np.any(sr):
        S = np.sqrt(hi[sr] - lo[sr])
        s = 0.5 * S[:, None] * (_GL_X + 1.0)
        acc(sr, hi[sr, None] - s ** 2, 2 * s * 0.5 * S[:, None])
    return out


def _cell_moments(pdf, lo, hi, base, width, P, breaks=(), singular=()):
    """Cell moments with splitting at density breakpoints (and singular points)."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    pieces_lo, pieces_hi, owner = [lo], [hi], [np.arange(len(lo))]
    for bp in sorted(set(list(breaks) + list(singular))):
        new_lo, new_hi, new_own = [], [], []
        for a, b_, own in zip(pieces_lo, pieces_hi, owner):
            inside = (a < bp) & (bp < b_)
            new_lo += [a[~inside], a[inside], np.full(inside.sum(), bp)]
            new_hi += [b_[~inside], np.full(inside.sum(), bp), b_[inside]]
            new_own += [own[~inside], own[inside], own[inside]]
        pieces_lo = [np.concatenate(new_lo)]
        pieces_hi = [np.concatenate(new_hi)]
        owner = [np.concatenate(new_own)]
    a, b_, own = pieces_lo[0], pieces_hi[0], owner[0]
    keep = b_ > a
    a, b_, own = a[keep], b_[keep], own[keep]
    sl = np.zeros(len(a), bool)
    sr = np.zeros(len(a), bool)
    for sp in singular:
        sl |= a == sp
        sr |= b_ == sp
    m = _gl_moments(pdf, a, b_, base[own], width[own], P, sl, sr)
    out = np.zeros((len(lo), P + 1))
    np.add.at(out, own, m)
    return out


# ---------------------------------------------------------------- measures

class _ArrivalMeasure:
    """Interarrival law, optionally conditioned on an elapsed time z."""

    def __init__(self, arrivals, z: float = 0.0):
        self.arr = arrivals
        self.z = float(z)
        if self.z > 0 and not isinstance(arrivals, Exponential):
            self.norm = float(arrivals.sf(self.z))
            if not self.norm > 1e-300:
                raise TailUnderflow(f"survival function vanishes at z={z}")
            self._Fz = float(arrivals.cdf(self.z))
        else:
            self.norm, self._Fz = 1.0, 0.0
            self.z = 0.0 if isinstance(arrivals, Exponential) else self.z

    def pdf(self, t):
        return self.arr.pdf(np.asarray(t) + self.z) / self.norm

    def cdf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        if self.z == 0:
            return self.arr.cdf(t)
        return (self.arr.cdf(t + self.z) - self._Fz) / self.norm

    def sf(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        if self.z == 0:
            return self.arr.sf(t)
        return self.arr.sf(t + self.z) / self.norm


def _jump_density(model: ProcessModel):
    """(pdf, breakpoints, singular points) of the continuous jump part, or None."""
    J = model.jumps
    if J.density is None or J.weight <= 0:
        return None
    fam, w = J.density, J.weight
    breaks, sing = [0.0], []
    p, pos, q, neg = fam._parts()
    for law, sgn, wt in ((pos, 1.0, p), (neg, -1.0, q)):
        if law is None or wt <= 0:
            continue
        if law.offset:
            breaks.append(sgn * law.offset)
        if isinstance(law, GammaHalfLaw):
            sing.append(sgn * law.offset)
    return (lambda y: w * fam.pdf(y)), breaks, sing


def _smooth_kernel(model: ProcessModel, b: float) -> bool:
    J = model.jumps
    if any(-b < loc < b and m > 0 for loc, m in J.atoms):
        return False
    d = _jump_density(model)
    if d is None:
        return True
    _, breaks, sing = d
    if sing:
        return False
    if any(0 < abs(bp) < b for bp in breaks):
        return False
    return J.density.rational_cf() is not None or type(J.density).__name__ in ("DoubleExponential",)


# ---------------------------------------------------------------- operator assembly

@dataclass
class _Operator:
    A: np.ndarray           # iteration matrix
    f: np.ndarray           # forcing
    init: np.ndarray        # initial iterate
    KN_parts: tuple = ()    # pieces reused by conditional evaluation


def _toeplitz_assemble(table_pos, table_neg, M, order, nrows=None):
    """Matrix with entry for cell k in row i determined by d = k - i.

    table_pos[d, p], d = 0..M-1 and table_neg[d', p] for d = -(d'+1), d' = 0..M-1.
    """
    out = np.zeros((M + 1, M + 1))
    for k0, k1, offs, C in _stencils(order, M):
        for j, o in enumerate(offs):
            vp = table_pos @ C[j]
            first_col = np.zeros(M + 1)
            first_col[0] = vp[0]
            if table_neg is not None:
                first_col[1:] = table_neg @ C[j]
            T = toeplitz(first_col, vp)  # (M+1, M): T[i, k] = v(k - i)
            out[:, k0 + o: k1 + o] += T[:, k0:k1]
    return out


def _outer_matrix(meas: _ArrivalMeasure, c: float, h: float, M: int, order: int):
    """W[i, j]: weight of g(x_j) in int_0^{t_b(x_i)} g(x_i + c l) dF(l)."""
    P = order
    d = np.arange(M)
    lo, hi = d * h / c, (d + 1) * h / c
    tab = _cell_moments(meas.pdf, lo, hi, lo, np.full(M, h / c), P, breaks=(), singular=())
    # renormalise cell masses to the exact cdf increments
    exact = meas.cdf(hi) - meas.cdf(lo)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(tab[:, 0] > 0, exact / tab[:, 0], 1.0)
    tab = tab * scale[:, None]
    return _toeplitz_assemble(tab, None, M, order)


def _jump_matrix(model: ProcessModel, h: float, M: int, order: int):
    """K[i, j]: weight of N(x_j) in int N(x_i + y) dH_cont(y) over landings in (0, b)."""
    dens = _jump_density(model)
    if dens is None:
        return np.zeros((M + 1, M + 1))
    pdf, breaks, sing = dens
    P = order
    dpos = np.arange(M)
    dneg = -(np.arange(M) + 1)
    tabs = []
    for dd in (dpos, dneg):
        lo, hi = dd * h, (dd + 1) * h
        tab = _cell_moments(pdf, lo, hi, lo, np.full(M, h), P, breaks=breaks, singular=sing)
        tabs.append(tab)
    return _toeplitz_assemble(tabs[0], tabs[1], M, order)


def _atom_rows(loc: float, meas: _ArrivalMeasure, c: float, nodes: np.ndarray,
               rows: np.ndarray, order: int):
    """Rows of int_0^{t_b} N_int(x + loc + c l) dF(l), N_int supported on (0, b)."""
    M = len(nodes) - 1
    h = nodes[1] - nodes[0]
    b = nodes[-1]
    out = np.zeros((len(rows), M + 1))
    x = nodes[rows]
    zlo = np.maximum(0.0, x + loc)
    zhi = np.full_like(x, min(b, b + loc))
    a = np.maximum(nodes[None, :-1], zlo[:, None])
    e = np.minimum(nodes[None, 1:], zhi[:, None])
    ri, ki = np.nonzero(e > a)
    if len(ri) == 0:
        return out
    base = x[ri] + loc
    lo = (a[ri, ki] - base) / c
    hi = (e[ri, ki] - base) / c
    # local coordinate t = (z - x_k)/h with z = base + c l
    lbase = (nodes[ki] - base) / c
    mom = _gl_moments(meas.pdf, lo, hi, lbase, np.full(len(lo), h / c), order)
    for k0, k1, offs, C in _stencils(order, M):
        sel = (ki >= k0) & (ki < k1)
        if not np.any(sel):
            continue
        for j, o in enumerate(offs):
            np.add.at(out, (ri[sel], ki[sel] + o), mom[sel] @ C[j])
    return out


def _atom_matrix(loc, meas, c, nodes, rows, order, chunk=128):
    M = len(nodes) - 1
    out = np.zeros((len(rows), M + 1))
    for s in range(0, len(rows), chunk):
        out[s: s + chunk] = _atom_rows(loc, meas, c, nodes, rows[s: s + chunk], order)
    return out


def _assemble(model: ProcessModel, b: float, M: int, order: int, target: str,
              meas: Optional[_ArrivalMeasure] = None, rows=None) -> _Operator:
    c = model.c
    J = model.jumps
    nodes = np.linspace(0.0, b, M + 1)
    h = b / M
    rows = np.arange(M + 1) if rows is None else np.asarray(rows)
    x = nodes[rows]
    tol = 1e-12 * b
    dens = _jump_density(model)
    fam, w = J.density, J.weight
    # continuous forcing pieces at every node (needed by W)
    if dens is not None:
        psi_c = w * (1.0 - fam.cdf(b - nodes))          # P_cont(J >= b - y)
        phi_c = w * fam.cdf(-nodes)                      # P_cont(J <= -y)
    else:
        psi_c = np.zeros(M + 1)
        phi_c = np.zeros(M + 1)
    K = _jump_matrix(model, h, M, order)
    if c == 0:
        A = K[rows].copy()
        up = psi_c.copy()
        lowf = phi_c.copy()
        for loc, m in J.atoms:
            if m <= 0:
                continue
            z = nodes + loc
            exit_up = z >= b - tol
            ruin = z <= tol
            up += m * exit_up
            lowf += m * ruin
            inside = ~(exit_up | ruin)
            cols, wts = _point_weights(np.clip(z / h, 0, M), M, order)
            ii = np.nonzero(inside[rows])[0]
            for j in range(order + 1):
                np.add.at(A, (ii, cols[rows][ii, j]), m * wts[rows][ii, j])
        f = (up if target == "upper" else lowf)[rows]
        init = f.copy()
        return _Operator(A, f, init)
    meas = meas if meas is not None else _ArrivalMeasure(model.arrivals)
    W = _outer_matrix(meas, c, h, M, order)[rows]
    A = W @ K
    tb = (b - x) / c
    Ftb = meas.cdf(tb)
    if target == "upper":
        f = meas.sf(tb) + W @ psi_c
    else:
        f = W @ phi_c
    p2 = np.array(1.0 - J.cdf_left(b - x), dtype=float)
    for loc, m in J.atoms:
        if m <= 0:
            continue
        if target == "upper" and loc > 0:
            f = f + m * (Ftb - meas.cdf(np.maximum(0.0, (b - loc - x) / c)))
        if target == "lower" and loc <= 0:
            f = f + m * meas.cdf(np.minimum(tb, np.maximum(0.0, (-loc - x) / c)))
        if -b < loc < b:
            A = A + m * _atom_matrix(loc, meas, c, nodes, rows, order)
    if target == "upper":
        init = meas.sf(tb) + p2 * Ftb
    else:
        init = np.zeros(len(rows))
    return _Operator(A, f, init)


# ---------------------------------------------------------------- solution

@dataclass
class GridSolution:
    b: float
    nodes: np.ndarray
    values: np.ndarray
    iterations: int
    error_bound: float
    L: float
    diffs: list = field(default_factory=list, repr=False)
    order: int = 1
    target: str = "upper"
    diagnostics: dict = field(default_factory=dict)
    raw_values: Optional[np.ndarray] = field(default=None, repr=False)

    def __call__(self, x):
        v = np.interp(np.asarray(x, dtype=float), self.nodes, self.values)
        return float(v) if np.ndim(v) == 0 else v


def solve_fredholm(model: ProcessModel, b: float, M: int = 2000, tol: float = 1e-10,
                   max_iter: int = 100_000, order="auto", target: str = "upper",
                   L: Optional[float] = None) -> GridSolution:
    """Picard iteration of the discretised integral equation on (0, b).

    The iteration runs on increments so that d_n = |N_{n} - N_{n-1}|_inf is
    computed without cancellation; it stops once d_n <= tol (1 - L) and
    reports the a-posteriori bound L d_n / (1 - L).
    """
    if model.c < 0:
        raise ValueError("negative drift must be reflected before calling the solver")
    if target not in ("upper", "lower"):
        raise ValueError("target must be 'upper' or 'lower'")
    L = contraction_constant(model, b) if L is None else L
    if L >= 1 - 1e-12:
        raise NotContractive(f"contraction constant {L} is not below 1")
    if order == "auto":
        order = 3 if _smooth_kernel(model, b) else 1
    op = _assemble(model, b, M, order, target)
    N = op.init.copy()
    delta = op.f + op.A @ N - N
    N = N + delta
    diffs = [float(np.max(np.abs(delta)))]
    it = 1
    stop = tol * (1 - L)
    while diffs[-1] > stop:
        if it >= max_iter:
            raise IterationCapExceeded(f"no convergence after {it} iterations (last diff {diffs[-1]:.3g})")
        delta = op.A @ delta
        N = N + delta
        diffs.append(float(np.max(np.abs(delta))))
        it += 1
    bound = L * diffs[-1] / (1 - L)
    excursion = float(max(0.0, -N.min(), N.max() - 1.0))
    sol = GridSolution(b=float(b), nodes=np.linspace(0.0, b, M + 1), values=np.clip(N, 0.0, 1.0),
                       iterations=it, error_bound=bound, L=float(L), diffs=diffs, order=order,
                       target=target, diagnostics={"clamp_excursion": excursion}, raw_values=N)
    sol.diagnostics["model"] = model
    return sol


def contraction(model: ProcessModel, b: float) -> float:
    return contraction_constant(model, b)


def conditional_ep(model: ProcessModel, b: float, x: float, z: float,
                   solution: Optional[GridSolution] = None, **kw) -> float:
    """Escape probability given that z time units have passed since the last arrival."""
    if solution is None:
        solution = solve_fredholm(model, b, **kw)
    if z == 0:
        return solution(x)
    if model.c == 0:
        return solution(x)  # no drift: the clock only matters through the next jump, whose effect is time-free
    meas = _ArrivalMeasure(model.arrivals, z)
    M = len(solution.nodes) - 1
    h = b / M
    N = solution.raw_values if solution.raw_values is not None else solution.values
    pos = x / h
    k = int(np.clip(np.floor(pos), 0, M - 1))
    rows = np.array([k, k + 1])
    op = _assemble(model, b, M, solution.order, solution.target, meas=meas, rows=rows)
    vals = op.f + op.A @ N
    t = pos - k
    return float(np.clip((1 - t) * vals[0] + t * vals[1], 0.0, 1.0))
