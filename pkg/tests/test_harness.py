import json
import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from flashopt.cli import main
from flashopt.flash import FlashConfig, Targets
from flashopt.harness import (
    CSV_COLUMNS,
    ExperimentConfig,
    ProblemSpec,
    binomial_lower_bound,
    decrement_experiment,
    default_config,
    dumps_json,
    eval_advantage_experiment,
    format_value,
    load_point,
    parse_config,
    parse_seeds,
    render_rows,
    resolve_x0,
    run_experiment,
    sign_test,
)
from flashopt.oracle import ConfigurationError, ContractViolation, SmoothnessConstants, make_test_problem
from flashopt.rng import make_rng

GOLDEN = Path(__file__).parent / "golden"

SMALL_RUN = """
[experiment]
name = small
kind = run
algorithm = flash-fs
seeds = 1-2

[problem]
name = separable-quartic
d = 4
n = 10

[targets]
eps = 0.01
eps_H = 0.1
"""


@pytest.mark.parametrize("kind", sorted(CSV_COLUMNS))
def test_csv_schema_matches_golden(kind):
    header = (GOLDEN / f"{kind}.csv").read_text().strip().split(",")
    assert tuple(header) == CSV_COLUMNS[kind]


def test_format_value():
    assert format_value(0.1) == "0.10000000000000001"
    assert format_value(1.0) == "1"
    assert format_value(True) == "true"
    assert format_value(np.float64(2.0) / 3) == "0.66666666666666663"
    assert format_value(None) == ""
    assert format_value(np.int64(7)) == "7"


def test_dumps_json_round_trips_17_digits():
    text = dumps_json({"a": 0.1, "b": [1.0 / 3, 2], "c": {"d": math.nan, "e": False}})
    assert "0.10000000000000001" in text and "0.33333333333333331" in text
    back = json.loads(text)
    assert back["a"] == 0.1 and back["b"][0] == 1.0 / 3 and back["c"]["d"] is None


def test_parse_seeds():
    assert parse_seeds("1-3, 10") == (1, 2, 3, 10)
    assert parse_seeds("5") == (5,)


def test_parse_config_values():
    cfg = parse_config(SMALL_RUN)
    assert cfg.name == "small" and cfg.seeds == (1, 2)
    assert cfg.problem == ProblemSpec(d=4, n=10)
    assert cfg.targets == Targets(0.01, 0.1)
    st = parse_config("[experiment]\nkind = run\n[problem]\nn = none\n[flash]\nvariant = stochastic\n"
                      "[negcurve]\nmax_iters = 30\n[descent]\nsign_rule = argmin\n")
    assert st.algorithm == "flash-st" and st.problem.n is None
    assert st.flash.nc.method == "oja" and st.flash.nc.max_iters == 30
    assert st.flash.sign_rule == "argmin"


@pytest.mark.parametrize("text", [
    "[experiment]\nkind = sweep\n",
    "[problem]\nname = rosenbrock\n",
    "[problem]\nwidth = 3\n",
    "[mystery]\nx = 1\n",
    "[problem]\nd = ten\n",
    "[negcurve]\nmethod = lanczos\n",
    "[experiment]\nseeds = 1,1\n",
    "[flash]\nvariant = hybrid\n",
    "[experiment]\nalgorithm = flash-st\n[problem]\nn = 100\n",
    "[flash]\nproject = maybe\n",
])
def test_parse_config_errors(text):
    with pytest.raises(ConfigurationError):
        parse_config(text)


def test_kind_mismatch_rejected():
    with pytest.raises(ConfigurationError):
        parse_config("[experiment]\nkind = escape\n", default_config("run"))


def test_resolve_x0_and_point_file(tmp_path):
    p = make_test_problem("separable-quartic", 3, 2)
    assert np.array_equal(resolve_x0("origin", p), np.zeros(3))
    assert np.array_equal(resolve_x0("1 2 3", p), [1.0, 2.0, 3.0])
    assert p.domain.contains(resolve_x0("random", p, 4))
    with pytest.raises(ConfigurationError):
        resolve_x0("1 2", p)
    (tmp_path / "a.json").write_text("[1, 2, 3]")
    (tmp_path / "b.json").write_text('{"point": [1, 2]}')
    (tmp_path / "c.txt").write_text("1.5 2.5\n")
    assert list(load_point(tmp_path / "a.json")) == [1, 2, 3]
    assert list(load_point(tmp_path / "b.json")) == [1, 2]
    assert list(load_point(tmp_path / "c.txt")) == [1.5, 2.5]


def test_statistics_helpers():
    # Clopper-Pearson, all successes: lower bound is alpha ** (1 / n)
    assert binomial_lower_bound(200, 200) == pytest.approx(0.01 ** (1 / 200))
    assert binomial_lower_bound(0, 10) == 0.0
    wins, m, p = sign_test([1, 2, 3, 4], [2, 3, 4, 4])
    assert (wins, m) == (3, 3) and p == pytest.approx(0.125)


def test_no_seeds_error():
    with pytest.raises(ConfigurationError, match="no seeds"):
        run_experiment(replace(default_config("check"), seeds=()), write=False)


def test_csv_byte_identical(tmp_path):
    cfg = parse_config(SMALL_RUN)
    a = run_experiment(replace(cfg, out_dir=str(tmp_path / "a")))
    b = run_experiment(replace(cfg, out_dir=str(tmp_path / "b")))
    ta, tb = Path(a.paths["table"]).read_bytes(), Path(b.paths["table"]).read_bytes()
    assert ta == tb
    lines = ta.decode().splitlines()
    assert lines[0] == (GOLDEN / "run.csv").read_text().strip()
    assert len(lines) == 3 and lines[1].startswith("small,1,")
    assert a.exit_code == 0
    summary = json.loads(Path(a.paths["summary"]).read_text())
    assert summary["pass"] is True and summary["success_rate"] == 1.0


def test_rows_sorted_independent_of_order():
    cfg = parse_config(SMALL_RUN)
    rows = [{"seed": 2, "tg_total": 5}, {"seed": 1, "tg_total": 3}]
    text = render_rows(cfg, rows, "csv").splitlines()
    assert text[1].startswith("small,1,") and text[2].startswith("small,2,")
    assert render_rows(cfg, rows[::-1], "csv") == render_rows(cfg, rows, "csv")


def test_failed_check_gives_nonzero_exit():
    cfg = replace(parse_config(SMALL_RUN), flash=FlashConfig(K=1), x0="1.3247 0 0 0")
    res = run_experiment(cfg, write=False)
    assert res.exit_code == 1 and res.summary["checks"]["success_rate"] is False


def test_aborted_run_gives_nonzero_exit():
    # lambda_min = -0.06 lies in the gray zone (-0.075, -0.05) at eps_H = 0.1
    text = SMALL_RUN.replace("name = separable-quartic", "name = coupled-saddle\nlam_min = -0.06")
    wanted = parse_config(text + "delta = 0.05\n")
    res = run_experiment(wanted, write=False)
    assert {r["termination"] for r in res.rows} == {"nc-inconclusive"}
    assert res.exit_code == 1 and res.summary["aborted"] == 2


def test_decrement_experiment_against_analytic_values():
    p = make_test_problem("separable-quartic", 10, 100)
    st = decrement_experiment(p, np.zeros(10), Targets(0.1, 0.5), 100, make_rng(1))
    assert st.bound == pytest.approx(0.015625)
    # every sign-averaged decrement lies in [eta^2/2 - eta^4/4, eta^2/2 - eta^4/(4 d)]
    zm = [r["zeta_mean_decrement"] for r in st.rows if r["variant"] == "ncd3"]
    assert all(0.125 - 0.015625 - 1e-12 <= z <= 0.125 - 0.0015625 + 1e-12 for z in zm)
    assert st.passed and st.mean_decrement >= st.bound
    # NCD2 step alpha = 1/24: alpha^2/2 - alpha^4/4 sum v^4
    alpha = 0.5 / 12
    assert alpha**2 / 2 - alpha**4 / 4 <= st.ncd2_mean <= alpha**2 / 2
    assert st.ncd2_mean == pytest.approx(8.67e-4, abs=1e-5)
    assert st.ratio >= 10
    assert st.nc_success_lower >= 0.9


def test_decrement_experiment_refuses_without_negative_curvature():
    p = make_test_problem("separable-quartic", 3, 5)
    with pytest.raises(ContractViolation, match="precondition"):
        decrement_experiment(p, np.ones(3), Targets(0.1, 0.5), 10, make_rng(0))


def test_advantage_requires_twenty_seeds():
    p = make_test_problem("separable-quartic", 4, 10)
    with pytest.raises(ContractViolation):
        eval_advantage_experiment(p, np.zeros(4), Targets(0.01, 0.1), range(5))


def test_degenerate_control_indistinguishable():
    # L3 = 3 L2^2 / eps_H makes the NCD3 step equal the NCD2 step
    p = make_test_problem("separable-quartic", 10, 100)
    c = p.constants
    t = Targets(0.01, 0.1)
    degenerate = SmoothnessConstants(c.L1, c.L2, 3 * c.L2**2 / t.eps_H, c.sigma, c.delta_f, c.variance_bound)
    res = eval_advantage_experiment(p, np.zeros(10), t, range(1, 21), constants=degenerate)
    assert res.p_two_sided > 0.05


def test_cli_check(tmp_path, capsys):
    cfg = tmp_path / "check.ini"
    cfg.write_text("[experiment]\nkind = check\n[problem]\nname = coupled-saddle\nd = 5\nn = 8\n[check]\npoints = 5\n")
    code = main(["check", "--config", str(cfg), "--out-dir", str(tmp_path)])
    assert code == 0
    out = json.loads(capsys.readouterr().out)
    assert out["checks"]["derivatives"] is True
    assert (tmp_path / "check.csv").exists()


def test_cli_run_scsg_json(tmp_path, capsys):
    cfg = tmp_path / "scsg.ini"
    cfg.write_text("[experiment]\nkind = run\n[problem]\nd = 10\nn = 200\n[scsg]\nepochs = 40\n")
    code = main(["run", "scsg", "--config", str(cfg), "--out-dir", str(tmp_path), "--format", "json",
                 "--seed", "3"])
    assert code == 0
    rows = json.loads((tmp_path / "scsg.json").read_text())
    assert len(rows) == 40 and list(rows[0]) == list(CSV_COLUMNS["scsg"])


def test_cli_certify(tmp_path, capsys):
    point = tmp_path / "x.json"
    point.write_text(json.dumps([1.0] * 10))
    assert main(["certify", "--point", str(point), "--out-dir", str(tmp_path)]) == 0
    cert = json.loads(capsys.readouterr().out)["certificate"]
    assert cert["pass"] is True and cert["lambda_min"] == pytest.approx(2.0)
    point.write_text(json.dumps([0.0] * 10))
    assert main(["certify", "--point", str(point), "--out-dir", str(tmp_path)]) == 1


def test_cli_bad_config_exit_code(tmp_path, capsys):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[problem]\nname = nope\n")
    assert main(["check", "--config", str(cfg), "--out-dir", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["certify", "--out-dir", str(tmp_path)]) == 2
