import csv
import io
import json
import subprocess
import sys

import pytest

from fkpde import cli

ASYM = """
[problem]
dim = 2
[coefficients]
drift = linear
drift_params = 0, 0, 0, 1, 0, 0
diffusion = constant_diag
diffusion_params = 1, 1
initial = constant
initial_params = 1
"""

BAD_KILLING = """
[problem]
dim = 1
[coefficients]
drift = constant
drift_params = 0
diffusion = constant_diag
diffusion_params = 1
killing = constant
killing_params = 2
initial = constant
initial_params = 1
[bounds]
killing_lower = 0
killing_upper = 1
"""


def run(*argv, env_seed=None, monkeypatch=None):
    out, err = io.StringIO(), io.StringIO()
    code = cli.run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def rows(text):
    lines = text.splitlines()
    assert lines[0] == "# fkpde-csv v1"
    return list(csv.DictReader(io.StringIO("\n".join(lines[1:]))))


SOLVE = ["solve", "--builtin", "adv_diff_1d", "--a", "0.01", "--b", "0.1", "--x", "0.9", "--t", "5"]


def test_solve_ea_row():
    code, out, _ = run(*SOLVE, "--method", "ea", "--n", "2000", "--seed", "7")
    assert code == cli.EXIT_OK
    (row,) = rows(out)
    assert row["method"] == "ea" and row["n"] == "2000" and row["ci_defined"] == "1"
    assert row["wall_s"] == "nan"
    assert abs(float(row["mean"]) - 56.13) < 5 * float(row["ci_half"])


def test_confidence_level_flag():
    _, wide, _ = run(*SOLVE, "--n", "2000", "--level", "0.99")
    _, narrow, _ = run(*SOLVE, "--n", "2000", "--level", "0.9")
    (w,), (n,) = rows(wide), rows(narrow)
    assert w["mean"] == n["mean"] and float(w["ci_half"]) > float(n["ci_half"])


def test_identical_invocations_give_identical_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(*SOLVE, "--n", "5000", "--seed", "3", "--threads", "1", "-o", str(a))[0] == 0
    assert run(*SOLVE, "--n", "5000", "--seed", "3", "--threads", "2", "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()


def test_seed_falls_back_to_environment(monkeypatch):
    monkeypatch.setenv("FKPDE_SEED", "11")
    _, env_out, _ = run(*SOLVE, "--n", "300")
    _, flag_out, _ = run(*SOLVE, "--n", "300", "--seed", "11")
    assert env_out == flag_out
    monkeypatch.setenv("FKPDE_SEED", "eleven")
    assert run(*SOLVE, "--n", "300")[0] == cli.EXIT_USAGE


def test_single_sample_has_undefined_ci():
    code, out, _ = run(*SOLVE, "--method", "debias", "--n", "1", "--format", "json")
    assert code == 0
    row = json.loads(out)["rows"][0]
    assert row["n"] == 1 and row["ci_defined"] is False and row["ci_half"] is None


@pytest.mark.parametrize("argv", [
    ["solve", "--x", "0.5", "--t", "1"],
    ["solve", "--builtin", "adv_diff_1d", "--x", "0.5,0.5", "--t", "1"],
    ["solve", "--builtin", "poisson_drift_2d", "--a", "1", "--x", "0.5,0.5", "--t", "1"],
    ["solve", "--builtin", "adv_diff_1d", "--x", "0.5", "--t", "-1"],
    ["solve", "--builtin", "adv_diff_1d", "--x", "0.5", "--t", "1", "--n", "0"],
    ["solve", "--builtin", "adv_diff_1d", "--x", "0.5", "--t", "1", "--halting", "uniform:3"],
    ["solve", "--builtin", "adv_diff_1d", "--problem-file", "p.ini", "--x", "0.5", "--t", "1"],
    ["benchmark", "--builtin", "adv_diff_1d", "--x", "0.5", "--t", "1"],
    ["solve", "--builtin", "adv_diff_1d", "--x", "0.5", "--t", "1", "--level", "1.5"],
    ["frobnicate"],
])
def test_usage_errors_exit_2(argv, capsys):
    assert run(*argv)[0] == cli.EXIT_USAGE


def test_inapplicable_problem_exits_3(tmp_path):
    p = tmp_path / "asym.ini"
    p.write_text(ASYM)
    code, _, err = run("solve", "--problem-file", str(p), "--x", "0,0", "--t", "1", "--n", "10")
    assert code == cli.EXIT_EA and "PotentialError" in err
    code, _, _ = run("solve", "--problem-file", str(p), "--x", "0,0", "--t", "1", "--n", "10",
                     "--method", "euler")
    assert code == cli.EXIT_OK


def test_bound_violation_exits_4(tmp_path):
    p = tmp_path / "kill.ini"
    p.write_text(BAD_KILLING)
    code, _, err = run("solve", "--problem-file", str(p), "--x", "0", "--t", "1", "--n", "200")
    assert code == cli.EXIT_NUMERIC and "BoundViolationError" in err


def test_table1_fig2d_benchmark_oracle_smoke():
    code, out, _ = run("table1", "--methods", "ea,debias", "--b-values", "0.1,0.4", "--n", "300",
                       "--n-debias", "300")
    assert code == 0 and [(r["case"], r["method"]) for r in rows(out)] == [
        ("b=0.1", "ea"), ("b=0.1", "debias"), ("b=0.4", "ea"), ("b=0.4", "debias")]
    code, out, _ = run("fig2d", "--n", "100", "--n-ea", "200")
    got = rows(out)
    assert code == 0 and [r["method"] for r in got] == [f"euler-{2 ** k}" for k in range(1, 11)] + ["ea"]
    code, out, _ = run("benchmark", "--builtin", "poisson_drift_2d", "--x", "0.5,0.5", "--t", "1", "--n", "200",
                       "--methods", "ea,debias,euler")
    assert code == 0 and len(rows(out)) == 3
    code, out, _ = run("oracle", "--builtin", "adv_diff_1d", "--x", "0.9", "--t", "1", "--h", "0.01", "--n",
                       "500", "--format", "json", "--timing")
    doc = json.loads(out)
    assert code == 0 and doc["rows"][0]["method"] == "oracle" and doc["rows"][0]["wall_s"] > 0
    assert doc["notes"][0].startswith("absorbed_fraction=")


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "fkpde", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "solve" in res.stdout
