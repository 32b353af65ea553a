"""Command line front end: ``escape solve|sweep|simulate|compare``.

Exit codes: 0 ok, 1 configuration error, 2 routing error, 3 numerical error,
4 Monte Carlo censoring, 5 ``compare`` found a disagreement above tolerance.
"""
from __future__ import annotations

import csv
import io
import json
import math
import sys
from dataclasses import dataclass, field, replace
from typing import Optional

import click
import numpy as np

from . import analytic, dispatch, mc
from .errors import EscapeError, NonTermination, RangeError, SchemaError
from .model import (
    DoubleExponential,
    Erlang,
    Exponential,
    ExponentialNegative,
    GammaHalfNegative,
    Hypoexponential,
    JumpSpec,
    Laplace,
    RationalCF,
    RationalLT,
    build_model,
)
from .ratfun import RationalTransform

EXIT_COMPARE = 5

_SCHEMA = {
    "model": {"drift": None, "arrivals": {"type", "rate", "rates", "shape", "Q", "R"},
              "jumps": {"type", "rate", "p", "rate_pos", "rate_neg", "shift_pos", "shift_neg",
                        "value", "atoms", "Q", "R"}},
    "query": {"a", "b", "x", "x_grid", "z", "method"},
    "numerics": {"grid", "tol", "nodes"},
    "mc": {"paths", "seed", "workers"},
    "output": {"path", "tolerance"},
}


@dataclass
class RunConfig:
    model: object
    a: float
    b: float
    xs: list
    z: float = 0.0
    method: str = "auto"
    numerics: dispatch.Numerics = field(default_factory=dispatch.Numerics)
    out: Optional[str] = None
    tolerance: float = 5e-4
    raw: dict = field(default_factory=dict, repr=False)


def _check_keys(block: dict, allowed, where: str):
    if not isinstance(block, dict):
        raise SchemaError(f"{where}: expected an object")
    for k in block:
        if k not in allowed:
            raise SchemaError(f"{where}: unknown key '{k}'")


def _need(block, key, where):
    if key not in block:
        raise SchemaError(f"{where}: missing required key '{key}'")
    return block[key]


def _arrivals(spec: dict):
    _check_keys(spec, _SCHEMA["model"]["arrivals"], "model.arrivals")
    kind = _need(spec, "type", "model.arrivals")
    w = "model.arrivals"
    if kind == "exponential":
        return Exponential(float(_need(spec, "rate", w)))
    if kind == "erlang":
        return Erlang(int(_need(spec, "shape", w)), float(_need(spec, "rate", w)))
    if kind == "hypoexponential":
        return Hypoexponential(tuple(_need(spec, "rates", w)))
    if kind == "rational":
        return RationalLT(RationalTransform(tuple(_need(spec, "Q", w)), tuple(_need(spec, "R", w))))
    raise SchemaError(f"{w}.type: unknown arrival law '{kind}'")


def _jumps(spec: dict) -> JumpSpec:
    _check_keys(spec, _SCHEMA["model"]["jumps"], "model.jumps")
    w = "model.jumps"
    kind = _need(spec, "type", w)
    atoms = tuple(tuple(map(float, a)) for a in spec.get("atoms", ()))
    if kind == "constant":
        return JumpSpec(((float(_need(spec, "value", w)), 1.0),) + atoms)
    if kind == "atoms":
        return JumpSpec(atoms)
    if kind == "exponential_negative":
        fam = ExponentialNegative(float(_need(spec, "rate", w)))
    elif kind == "double_exponential":
        fam = DoubleExponential(float(_need(spec, "p", w)), float(_need(spec, "rate_pos", w)),
                                float(_need(spec, "rate_neg", w)), float(spec.get("shift_pos", 0.0)),
                                float(spec.get("shift_neg", 0.0)))
    elif kind == "laplace":
        fam = Laplace(float(_need(spec, "rate", w)))
    elif kind == "gamma_half_negative":
        fam = GammaHalfNegative(float(_need(spec, "rate", w)))
    elif kind == "rational_cf":
        fam = RationalCF(RationalTransform(tuple(_need(spec, "Q", w)), tuple(_need(spec, "R", w))))
    else:
        raise SchemaError(f"{w}.type: unknown jump law '{kind}'")
    return JumpSpec(atoms, fam)


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {exc.lineno}: {exc.msg}") from None
    _check_keys(raw, _SCHEMA, "config")
    mspec = _need(raw, "model", "config")
    _check_keys(mspec, _SCHEMA["model"], "model")
    q = _need(raw, "query", "config")
    _check_keys(q, _SCHEMA["query"], "query")
    for blk in ("numerics", "mc", "output"):
        _check_keys(raw.get(blk, {}), _SCHEMA[blk], blk)
    try:
        model = build_model(float(_need(mspec, "drift", "model")), _arrivals(_need(mspec, "arrivals", "model")),
                            _jumps(_need(mspec, "jumps", "model")))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"model: {exc}") from None
    a = float(q.get("a", 0.0))
    b = float(_need(q, "b", "query"))
    if "x" in q and "x_grid" in q:
        raise SchemaError("query: give either 'x' or 'x_grid', not both")
    xs = [float(v) for v in q["x_grid"]] if "x_grid" in q else [float(_need(q, "x", "query"))]
    num, mcb = raw.get("numerics", {}), raw.get("mc", {})
    numerics = dispatch.Numerics(grid=int(num.get("grid", 2000)), tol=float(num.get("tol", 1e-10)),
                                 nodes=int(num.get("nodes", 48)), paths=int(mcb.get("paths", 1_000_000)),
                                 seed=int(mcb.get("seed", 12345)), workers=int(mcb.get("workers", 1)))
    out = raw.get("output", {})
    cfg = RunConfig(model=model, a=a, b=b, xs=xs, z=float(q.get("z", 0.0)), method=q.get("method", "auto"),
                    numerics=numerics, out=out.get("path"), tolerance=float(out.get("tolerance", 5e-4)), raw=raw)
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig):
    if not cfg.a < cfg.b:
        raise RangeError(f"need a < b, got a={cfg.a}, b={cfg.b}")
    for x in cfg.xs:
        if not cfg.a < x < cfg.b:
            raise RangeError(f"need a < x < b, got x={x}")
    if cfg.z < 0:
        raise RangeError("z must be nonnegative")
    if cfg.method not in ("auto", "analytic", "fredholm", "mc"):
        raise SchemaError(f"query.method: unknown method '{cfg.method}'")


# ---------------------------------------------------------------- CSV

def fmt(v) -> str:
    if isinstance(v, str):
        return v
    if v is None:
        return "nan"
    return "%.17g" % v


def write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def read_csv(text: str):
    rows = list(csv.reader(io.StringIO(text)))
    header, body = rows[0], rows[1:]
    out = []
    for r in body:
        parsed = []
        for v in r:
            try:
                parsed.append(float(v))
            except ValueError:
                parsed.append(v)
        out.append(parsed)
    return header, out


def _emit(text: str, path: Optional[str]):
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        click.echo(text, nl=False)


# ---------------------------------------------------------------- commands

def run_solve(cfg: RunConfig):
    rows = []
    for x in cfg.xs:
        r = dispatch.solve(cfg.model, dispatch.EscapeQuery(x=x, a=cfg.a, b=cfg.b, z=cfg.z, method=cfg.method),
                           cfg.numerics)
        if r.diagnostics.get("censored"):
            raise NonTermination(f"{r.diagnostics['censored']} Monte Carlo paths censored")
        rows.append((x, r.probability, r.route.value, r.error_bound))
    return ["x", "probability", "route", "error_bound"], rows


def run_simulate(cfg: RunConfig):
    rows = []
    num = cfg.numerics
    for x in cfg.xs:
        if cfg.z > 0:
            e = mc.estimate_conditional_ep(cfg.model, x, cfg.b, cfg.z, num.paths, num.seed, a=cfg.a,
                                           workers=num.workers)
        else:
            e = mc.estimate_ep(cfg.model, x, cfg.a, cfg.b, num.paths, num.seed, workers=num.workers)
        if not e.valid:
            raise NonTermination(e.diagnostics.get("invalid", "censored paths"))
        rows.append((x, e.value, e.stderr, e.ci95[0], e.ci95[1], e.n_paths, e.seed))
    return ["x", "probability", "stderr", "ci_low", "ci_high", "n_paths", "seed"], rows


def run_compare(cfg: RunConfig):
    """Analytic, Fredholm and MC side by side. Returns (header, rows, ok)."""
    rows, ok = [], True
    num = cfg.numerics
    for x in cfg.xs:
        q = dict(x=x, a=cfg.a, b=cfg.b, z=cfg.z)
        try:
            an = dispatch.solve(cfg.model, dispatch.EscapeQuery(method="analytic", **q), num).probability
        except EscapeError:
            an = float("nan")
        try:
            fr = dispatch.solve(cfg.model, dispatch.EscapeQuery(method="fredholm", **q), num).probability
        except EscapeError:
            fr = float("nan")
        r = dispatch.solve(cfg.model, dispatch.EscapeQuery(method="mc", **q), num)
        if r.diagnostics.get("censored"):
            raise NonTermination(f"{r.diagnostics['censored']} Monte Carlo paths censored")
        mv, se = r.probability, r.stderr
        diffs = []
        for u, v, tol in ((an, fr, cfg.tolerance), (an, mv, max(cfg.tolerance, 4 * se)),
                          (fr, mv, max(cfg.tolerance, 4 * se))):
            if math.isfinite(u) and math.isfinite(v):
                d = abs(u - v)
                diffs.append(d)
                ok &= d <= tol
        rows.append((x, an, fr, mv, se, max(diffs) if diffs else float("nan")))
    return ["x", "analytic", "fredholm", "mc", "mc_stderr", "max_pairwise_diff"], rows, ok


def _load(config, x, b, method, paths, seed) -> RunConfig:
    cfg = parse_config(config.read())
    if x is not None:
        cfg.xs = [x]
    if b is not None:
        cfg.b = b
    if method is not None:
        cfg.method = method
    if paths is not None:
        cfg.numerics = replace(cfg.numerics, paths=paths)
    if seed is not None:
        cfg.numerics = replace(cfg.numerics, seed=seed)
    _validate(cfg)
    return cfg


def _common(f):
    for opt in reversed([
        click.option("--config", type=click.File("r"), required=True, help="JSON run configuration."),
        click.option("--x", "x", type=float, default=None, help="Start level (overrides query.x)."),
        click.option("--b", "b", type=float, default=None, help="Upper barrier (overrides query.b)."),
        click.option("--method", type=click.Choice(["auto", "analytic", "fredholm", "mc"]), default=None),
        click.option("--paths", type=int, default=None),
        click.option("--seed", type=int, default=None),
        click.option("--out", type=click.Path(dir_okay=False), default=None, help="CSV output file."),
    ]):
        f = opt(f)
    return f


def _guarded(fn):
    try:
        return fn()
    except EscapeError as exc:
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(exc.exit_code)


@click.group()
def main():
    """Exit probabilities for drifted compound renewal processes."""


@main.command()
@_common
def solve(config, x, b, method, paths, seed, out):
    """Probability for each start level, with route and error bound."""
    def go():
        cfg = _load(config, x, b, method, paths, seed)
        header, rows = run_solve(cfg)
        if out or cfg.out:
            _emit(write_csv(header, rows), out or cfg.out)
        for r in rows:
            click.echo(f"x={fmt(r[0])} probability={fmt(r[1])} route={r[2]} error_bound={fmt(r[3])}")
    _guarded(go)


@main.command()
@_common
def sweep(config, x, b, method, paths, seed, out):
    """CSV of (x, probability, route, error_bound) over query.x_grid."""
    def go():
        cfg = _load(config, x, b, method, paths, seed)
        header, rows = run_solve(cfg)
        _emit(write_csv(header, rows), out or cfg.out)
    _guarded(go)


@main.command()
@_common
def simulate(config, x, b, method, paths, seed, out):
    """Monte Carlo estimate with standard error."""
    def go():
        cfg = _load(config, x, b, method, paths, seed)
        header, rows = run_simulate(cfg)
        _emit(write_csv(header, rows), out or cfg.out)
    _guarded(go)


@main.command()
@_common
@click.option("--tol", type=float, default=None, help="Agreement tolerance (default 5e-4).")
def compare(config, x, b, method, paths, seed, out, tol):
    """Analytic vs Fredholm vs Monte Carlo; exit status 5 on disagreement."""
    def go():
        cfg = _load(config, x, b, method, paths, seed)
        if tol is not None:
            cfg.tolerance = tol
        header, rows, ok = run_compare(cfg)
        _emit(write_csv(header, rows), out or cfg.out)
        if not ok:
            click.echo("error: methods disagree beyond tolerance", err=True)
            sys.exit(EXIT_COMPARE)
    _guarded(go)


if __name__ == "__main__":
    main()
