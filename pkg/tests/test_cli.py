import functools
import json

import pytest
from click.testing import CliRunner

from escape import cli
from escape.errors import RangeError, SchemaError

ERLANG = {
    "model": {"drift": 1.0, "arrivals": {"type": "erlang", "shape": 2, "rate": 1.0},
              "jumps": {"type": "exponential_negative", "rate": 1.0}},
    "query": {"a": 0.0, "b": 2.0, "x_grid": [0.5, 1.0, 1.5]},
    "mc": {"paths": 100000, "seed": 3},
}


def _cfg(**patch):
    d = json.loads(json.dumps(ERLANG))
    for path, v in patch.items():
        *head, last = path.split("__")
        blk = d
        for h in head:
            blk = blk.setdefault(h, {})
        blk[last] = v
    return d


def _invoke(tmp_path, cmd, cfg, *extra):
    p = tmp_path / "run.json"
    p.write_text(cfg if isinstance(cfg, str) else json.dumps(cfg, indent=2))
    return CliRunner().invoke(cli.main, [cmd, "--config", str(p), *extra])


def test_parse_defaults():
    cfg = cli.parse_config(json.dumps(ERLANG))
    assert cfg.xs == [0.5, 1.0, 1.5]
    assert cfg.method == "auto" and cfg.z == 0.0
    assert cfg.numerics.grid == 2000 and cfg.numerics.seed == 3
    assert cfg.tolerance == 5e-4


def test_range_errors():
    with pytest.raises(RangeError):
        cli.parse_config(json.dumps(_cfg(query__a=3.0)))
    with pytest.raises(RangeError):
        cli.parse_config(json.dumps(_cfg(query__x_grid=[2.5])))


def test_unknown_key_is_named():
    d = _cfg()
    d["model"]["driftt"] = 1.0
    with pytest.raises(SchemaError, match="driftt"):
        cli.parse_config(json.dumps(d))


def test_bad_json_reports_line():
    with pytest.raises(SchemaError, match="line 3"):
        cli.parse_config('{\n "model": {},\n "query": [,]\n}')


def test_unknown_family():
    with pytest.raises(SchemaError, match="pareto"):
        cli.parse_config(json.dumps(_cfg(model__jumps={"type": "pareto", "rate": 1.0})))


def test_csv_round_trip():
    header = ["x", "probability", "route"]
    rows = [(0.1, 1 / 3, "ZeroDrift"), (0.30000000000000004, 0.8752890233594002, "PoissonOneSided")]
    text = cli.write_csv(header, rows)
    h2, rows2 = cli.read_csv(text)
    assert h2 == header
    assert rows2[0][1] == 1 / 3 and rows2[1][0] == 0.30000000000000004
    assert cli.write_csv(h2, rows2) == text


def test_sweep_writes_csv(tmp_path):
    out = tmp_path / "out.csv"
    res = _invoke(tmp_path, "sweep", _cfg(), "--out", str(out))
    assert res.exit_code == 0, res.output
    header, rows = cli.read_csv(out.read_text())
    assert header == ["x", "probability", "route", "error_bound"]
    assert rows[1][2] == "RationalArrivalsOneSided"
    assert rows[1][1] == pytest.approx(0.9280894226500892, abs=1e-10)


def test_solve_prints(tmp_path):
    res = _invoke(tmp_path, "solve", _cfg(), "--x", "1.0")
    assert res.exit_code == 0
    assert "route=RationalArrivalsOneSided" in res.output


def test_config_error_exit_code(tmp_path):
    d = _cfg()
    d["model"]["driftt"] = 1.0
    res = _invoke(tmp_path, "solve", d)
    assert res.exit_code == 1
    assert "driftt" in res.output


def test_routing_error_exit_code(tmp_path):
    # method forced to analytic on a model without a closed form
    d = _cfg(model__jumps={"type": "double_exponential", "p": 0.5, "rate_pos": 1.0, "rate_neg": 1.0,
                           "shift_pos": 0.5}, query__method="analytic")
    res = _invoke(tmp_path, "solve", d)
    assert res.exit_code == 2


def test_censoring_exit_code(tmp_path, monkeypatch):
    orig = cli.mc.estimate_ep
    monkeypatch.setattr(cli.mc, "estimate_ep", functools.partial(orig, max_events=5))
    d = _cfg(model__drift=0.0, model__jumps={"type": "atoms", "atoms": [[1e-3, 0.5], [-1e-3, 0.5]]},
             query__x_grid=[1.0], mc__paths=200)
    res = _invoke(tmp_path, "simulate", d)
    assert res.exit_code == 4


def test_numerics_error_exit_code(tmp_path):
    res = _invoke(tmp_path, "simulate", _cfg(query__x_grid=[1.0], query__z=1e4, mc__paths=200))
    assert res.exit_code == 3


def test_simulate_columns(tmp_path):
    res = _invoke(tmp_path, "simulate", _cfg(query__x_grid=[1.0]), "--paths", "2000", "--seed", "1")
    assert res.exit_code == 0
    header, rows = cli.read_csv(res.output)
    assert header == ["x", "probability", "stderr", "ci_low", "ci_high", "n_paths", "seed"]
    assert rows[0][5] == 2000 and rows[0][6] == 1


def test_compare_agrees(tmp_path):
    res = _invoke(tmp_path, "compare", _cfg(query__x_grid=[1.0]))
    assert res.exit_code == 0, res.output
    header, rows = cli.read_csv(res.output)
    assert header[-1] == "max_pairwise_diff"
    assert rows[0][5] <= max(5e-4, 4 * rows[0][4])


def test_compare_disagreement(tmp_path):
    res = _invoke(tmp_path, "compare", _cfg(query__x_grid=[1.0], numerics__grid=20, mc__paths=2000),
                  "--tol", "1e-12")
    assert res.exit_code == cli.EXIT_COMPARE
