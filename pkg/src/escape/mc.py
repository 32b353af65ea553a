"""Event-driven Monte Carlo for exit problems.

Between arrivals the path is a straight line, so the upper (lower) barrier can
only be crossed by drift when c > 0 (c < 0), and otherwise only at jump
epochs. No time discretisation is involved.

Randomness comes from a counter-based generator: uniform number k of path i is
a hash of (seed, i, k). Any partition of the paths over workers therefore
produces bit-identical estimates.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import NonTermination, TailUnderflow
from .model import ProcessModel, net_profit, NetProfit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_CHUNK = 1 << 16
MAX_EVENTS = 10_000_000


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _M1
        z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def stream_keys(seed: int, paths: np.ndarray) -> np.ndarray:
    base = _mix(np.array([seed & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64))[0]
    with np.errstate(over="ignore"):
        return _mix(base + np.asarray(paths, dtype=np.uint64) * _GOLDEN)


def uniforms(keys: np.ndarray, counter: int, k: int) -> np.ndarray:
    """k open-interval uniforms per key, starting at the given counter."""
    ctr = np.arange(counter, counter + k, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = _mix(keys[:, None] + (ctr[None, :] + np.uint64(1)) * _GOLDEN)
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53


UPPER, LOWER, CENSORED = 1, 0, -1


@dataclass(frozen=True)
class ExitRecord:
    side: str          # "Upper" or "Lower"
    exit_time: float
    jumps_seen: int


@dataclass
class McEstimate:
    value: float
    stderr: float
    ci95: tuple
    n_paths: int
    seed: int
    censored: int = 0
    diagnostics: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return self.censored <= 1e-6 * (self.n_paths + self.censored)


def _run_paths(model: ProcessModel, x: float, a: float, b: float, idx: np.ndarray, seed: int,
               z: float = 0.0, horizon: Optional[float] = None, max_events: int = MAX_EVENTS):
    """Simulate the given path indices. Returns (side, exit_time, jumps_seen) arrays."""
    arr, J, c = model.arrivals, model.jumps, model.c
    slots = getattr(arr, "slots", 1)
    per_event = slots + 3
    n = idx.size
    keys = stream_keys(seed, idx)
    pos = np.full(n, float(x))
    t = np.zeros(n)
    side = np.full(n, CENSORED, dtype=np.int8)
    texit = np.full(n, np.nan)
    seen = np.zeros(n, dtype=np.int64)
    act = np.arange(n)
    ev = 0
    while act.size and ev < max_events:
        u = uniforms(keys[act], ev * per_event, per_event)
        if ev == 0 and z > 0:
            T = arr.conditional_sample(u[:, 0], z)
        else:
            T = arr.sample(u[:, :slots])
        p = pos[act]
        done = np.zeros(act.size, dtype=bool)
        if horizon is not None:
            late = t[act] + T > horizon
            side[act[late]] = UPPER
            texit[act[late]] = horizon
            done |= late
        if c > 0:
            hit = ~done & (T >= (b - p) / c)
            side[act[hit]] = UPPER
            texit[act[hit]] = t[act[hit]] + (b - p[hit]) / c
            done |= hit
        elif c < 0:
            hit = ~done & (T >= (a - p) / c)
            side[act[hit]] = LOWER
            texit[act[hit]] = t[act[hit]] + (a - p[hit]) / c
            done |= hit
        go = ~done
        g = act[go]
        newpos = p[go] + c * T[go] + J.sample(u[go, slots:slots + 3])
        pos[g] = newpos
        t[g] += T[go]
        seen[g] += 1
        up = newpos >= b
        low = newpos <= a
        side[g[up]] = UPPER
        side[g[low]] = LOWER
        texit[g[up | low]] = t[g[up | low]]
        act = g[~(up | low)]
        ev += 1
    return side, texit, seen


def _count(model, x, a, b, n_paths, seed, z=0.0, horizon=None, workers=1, max_events=MAX_EVENTS):
    chunks = [np.arange(s, min(s + _CHUNK, n_paths), dtype=np.int64) for s in range(0, n_paths, _CHUNK)]

    def work(idx):
        side, _, _ = _run_paths(model, x, a, b, idx, seed, z, horizon, max_events)
        return int(np.sum(side == UPPER)), int(np.sum(side == CENSORED))

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            res = list(ex.map(work, chunks))
    else:
        res = [work(ch) for ch in chunks]
    # integer counts: the total is independent of how paths were split
    return sum(r[0] for r in res), sum(r[1] for r in res)


def _estimate(hits: int, censored: int, n_paths: int, seed: int, **diag) -> McEstimate:
    n = n_paths - censored
    v = hits / n if n else float("nan")
    se = math.sqrt(max(v * (1 - v), 0.0) / n) if n else float("nan")
    ci = (max(0.0, v - 1.96 * se), min(1.0, v + 1.96 * se))
    est = McEstimate(value=v, stderr=se, ci95=ci, n_paths=n, seed=seed, censored=censored, diagnostics=diag)
    if not est.valid:
        est.diagnostics["invalid"] = f"{censored} censored paths"
    return est


def simulate_exit(model: ProcessModel, x: float, a: float, b: float, stream=(0, 0),
                  max_events: int = MAX_EVENTS) -> ExitRecord:
    """One path; ``stream`` is (seed, path index)."""
    if not a < x < b:
        raise ValueError("need a < x < b")
    seed, i = stream
    side, texit, seen = _run_paths(model, x, a, b, np.array([i]), seed, max_events=max_events)
    if side[0] == CENSORED:
        raise NonTermination(f"path {i} did not exit after {max_events} events")
    return ExitRecord("Upper" if side[0] == UPPER else "Lower", float(texit[0]), int(seen[0]))


def estimate_ep(model: ProcessModel, x: float, a: float, b: float, n_paths: int, seed: int,
                workers: int = 1, max_events: int = MAX_EVENTS) -> McEstimate:
    if n_paths < 100:
        raise ValueError("n_paths must be at least 100")
    if not a < x < b:
        raise ValueError("need a < x < b")
    hits, cens = _count(model, x, a, b, n_paths, seed, workers=workers, max_events=max_events)
    return _estimate(hits, cens, n_paths, seed)


def estimate_conditional_ep(model: ProcessModel, x: float, b: float, z: float, n_paths: int, seed: int,
                            a: float = 0.0, workers: int = 1, max_events: int = MAX_EVENTS) -> McEstimate:
    """Escape probability when z time units have elapsed since the last arrival."""
    if not float(model.arrivals.sf(z)) > 1e-300:
        raise TailUnderflow(f"P(T > {z}) underflows")
    hits, cens = _count(model, x, a, b, n_paths, seed, z=z, workers=workers, max_events=max_events)
    return _estimate(hits, cens, n_paths, seed, z=z)


def default_horizon(model: ProcessModel, x: float) -> float:
    et = float(model.arrivals.mean)
    drift = model.c * et + model.jumps.mean     # mean gain per renewal cycle
    if net_profit(model) is NetProfit.Holds:
        return max(50.0 * x * et / drift, 100.0 * et)
    return 100.0 * et


def estimate_survival(model: ProcessModel, x: float, horizon: Optional[float] = None, n_paths: int = 100_000,
                      seed: int = 0, workers: int = 1) -> McEstimate:
    """Fraction of paths not ruined before ``horizon``; biased upwards by truncation."""
    if model.c <= 0:
        raise ValueError("survival estimates need positive drift")
    h = default_horizon(model, x) if horizon is None else float(horizon)
    hits, cens = _count(model, x, 0.0, np.inf, n_paths, seed, horizon=h, workers=workers)
    est = _estimate(hits, cens, n_paths, seed, horizon=h, bias="upward (finite horizon)")
    if net_profit(model) is not NetProfit.Holds:
        est.diagnostics["flag"] = "net profit condition fails; estimate decays to 0 with the horizon"
    return est
