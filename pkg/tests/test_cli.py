import csv
import io
import json
import os
import subprocess
import sys
from importlib import resources
from types import SimpleNamespace

import jsonschema
import numpy as np
import pytest

from nehari_lab import cli

SCHEMA = json.loads(resources.files("nehari_lab").joinpath("schemas/report-v1.json").read_text())


def run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr().out
    return code, out


def run_json(argv, capsys):
    code, out = run(argv, capsys)
    env = json.loads(out)
    jsonschema.validate(env, SCHEMA)
    return code, env


def test_solve_report(capsys):
    code, env = run_json(["solve", "--p", "2", "--omega", "0.1"], capsys)
    assert code == 0 and env["kind"] == "solve"
    pay = env["payload"]
    assert pay["below_m_inf"] is True
    assert abs(pay["nehari_residual"]) <= 1e-6
    assert env["config"]["params"] == {"branches": 1, "omega": 0.1, "p": 2.0}
    assert "shoot" in env["timings"]


def test_payload_is_deterministic(capsys):
    argv = ["sweep", "--p", "2", "--omega-lo", "0.1", "--omega-hi", "1", "--n", "3"]
    _, a = run_json(argv, capsys)
    _, b = run_json(argv, capsys)
    assert a["payload"] == b["payload"] and a["config"] == b["config"]


def test_parallel_sweep_matches_serial(capsys):
    argv = ["sweep", "--p", "2", "--omega-lo", "0.1", "--omega-hi", "1", "--n", "3"]
    _, a = run_json(argv, capsys)
    _, b = run_json(argv + ["--jobs", "2"], capsys)
    assert a["payload"] == b["payload"]
    assert b["config"]["jobs"] == 2


def test_sweep_csv(capsys):
    code, out = run(["sweep", "--p", "2", "--omega-lo", "0.1", "--omega-hi", "1", "--n", "2", "--format", "csv"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 2
    assert list(rows[0]) == ["omega", "m_value", "error_bar", "witness", "below_m_inf"]
    assert float(rows[0]["omega"]) == pytest.approx(0.1)


@pytest.mark.parametrize(
    "argv",
    [
        ["solve", "--p", "6", "--omega", "1"],
        ["solve", "--p", "2", "--omega", "-1"],
        ["sweep", "--p", "2", "--omega-lo", "1", "--omega-hi", "0.1"],
        ["sweep", "--p", "2", "--omega-lo", "0.1", "--omega-hi", "1", "--jobs", "0"],
        ["solve", "--p", "2", "--omega", "0.1", "--grid-R", "50"],
        ["solve", "--p", "2", "--omega", "0.1", "--format", "csv"],
        ["verify", "--checks", "Z9", "--json"],
    ],
)
def test_precondition_exit_code(argv, capsys):
    code, env = run_json(argv, capsys)
    assert code == 2 and env["kind"] == "error"
    assert env["payload"]["exit_code"] == 2


def test_numerical_failure_exit_code(capsys):
    code, env = run_json(["solve", "--p", "2", "--omega", "1"], capsys)
    assert code == 3
    assert env["payload"]["error_type"] == "NoSolutionError"
    assert env["config"]["params"]["omega"] == 1.0


def test_explicit_grid_solve(capsys):
    code, env = run_json(["solve", "--p", "2", "--omega", "0.1", "--grid-R", "150", "--grid-N", "40000"], capsys)
    assert code == 0
    assert env["config"]["grid"] == {"R": 150.0, "N": 40000, "grading": "geometric"}
    assert env["payload"]["grid"]["R"] == pytest.approx(150.0)


def test_threshold_report(capsys):
    code, env = run_json(["threshold", "--p", "4", "--omega-lo", "0.01", "--omega-hi", "1"], capsys)
    assert code == 0
    assert env["payload"]["bracket"] is None
    assert env["payload"]["marker"] == "no finite threshold found"


def test_spectral_report(capsys):
    code, env = run_json(["spectral", "--checks", "kernel", "eig"], capsys)
    assert code == 0
    pay = env["payload"]
    assert pay["lplus_negative_count"] == 1
    assert pay["kernel_min_order"] >= 1.8


def test_spectral_rejects_unknown_check(capsys):
    code, _ = run_json(["spectral", "--checks", "bogus"], capsys)
    assert code == 2


def test_testfun_csv_and_json(capsys):
    code, env = run_json(["testfun", "--p", "3"], capsys)
    assert code == 0
    assert env["payload"]["slopes"]["grad_excess"] == pytest.approx(2.0, abs=0.15)
    code, out = run(["testfun", "--p", "3", "--format", "csv", "--n", "4"], capsys)
    assert code == 0 and len(out.strip().splitlines()) == 5


def test_gap_report(capsys):
    code, env = run_json(["gap", "--p", "2", "--omega", "0.29"], capsys)
    assert code == 0
    assert env["payload"]["gap_significant"] is True


def test_gap_empty_set_serialises_inf(capsys):
    code, env = run_json(["gap", "--p", "2", "--omega", "1"], capsys)
    assert code == 0
    assert env["payload"]["m_S"] == "inf" and env["payload"]["solutions_found"] == 0


def test_verify_lines_and_json(capsys):
    code, out = run(["verify", "--checks", "A3"], capsys)
    assert code == 0 and out.startswith("PASS A3")
    code, env = run_json(["verify", "--checks", "A3", "--json"], capsys)
    assert env["payload"]["all_passed"] is True and "A3" in env["timings"]
    assert "seconds" not in env["payload"]["results"][0]


def test_out_file(tmp_path, capsys):
    path = tmp_path / "r.json"
    code, out = run(["verify", "--checks", "A3", "--out", str(path)], capsys)
    assert code == 0
    jsonschema.validate(json.loads(path.read_text()), SCHEMA)


@pytest.mark.parametrize(
    "text, expected",
    [
        ("", {}),
        ("R=200,N=4000", {"R": 200.0, "N": 4000}),
        (" R=5 , N=64 , grading=uniform ", {"R": 5.0, "N": 64, "grading": "uniform"}),
    ],
)
def test_parse_grid_env(text, expected):
    assert cli.parse_grid_env(text) == expected


@pytest.mark.parametrize("text", ["R200", "M=3", "R=abc"])
def test_parse_grid_env_errors(text):
    with pytest.raises(ValueError):
        cli.parse_grid_env(text)


def _ns(**kw):
    base = dict(grid_R=None, grid_N=None, grading=None)
    base.update(kw)
    return SimpleNamespace(**base)


def test_flags_override_environment(monkeypatch):
    monkeypatch.setenv(cli.GRID_ENV, "R=100,N=2000,grading=uniform")
    assert cli.resolve_grid(_ns()) == cli.GridSpec(100.0, 2000, "uniform")
    assert cli.resolve_grid(_ns(grid_N=500, grading="geometric")) == cli.GridSpec(100.0, 500, "geometric")
    monkeypatch.delenv(cli.GRID_ENV)
    assert cli.resolve_grid(_ns()) is None


def test_environment_grid_reaches_config(monkeypatch, capsys):
    monkeypatch.setenv(cli.GRID_ENV, "R=150,N=40000")
    code, env = run_json(["solve", "--p", "2", "--omega", "0.1"], capsys)
    assert code == 0 and env["config"]["grid"]["N"] == 40000


@pytest.mark.parametrize("grading", ["uniform", "geometric"])
@pytest.mark.parametrize("R, N", [(20.0, 100), (500.0, 4001), (1e4, 2000)])
def test_build_grid(R, N, grading):
    g = cli.build_grid(R, N, grading)
    assert g.nodes[-1] == pytest.approx(R, rel=1e-10)
    assert g.N % 2 == 0 and g.N >= N
    assert np.all(np.diff(g.nodes) > 0)


def test_to_jsonable():
    obj = {"a": np.float64(np.inf), "b": [np.int64(3), np.nan], 1: np.array([1.5]), "c": np.bool_(True)}
    assert cli.to_jsonable(obj) == {"a": "inf", "b": [3, "nan"], "1": [1.5], "c": True}
    with pytest.raises(TypeError):
        cli.to_jsonable(object())


def test_corrupted_weights_fail_quadrature_checks():
    # negative control: a perturbed quadrature must be caught by the verifier
    env = dict(os.environ, NEHARI_LAB_WEIGHT_CORRUPTION="1e-3")
    out = subprocess.run(
        [sys.executable, "-m", "nehari_lab", "verify", "--checks", "A1", "A3"],
        env=env, capture_output=True, text=True, timeout=600,
    )
    assert out.returncode == 3
    lines = out.stdout.strip().splitlines()
    assert lines[0].startswith("FAIL A1") and lines[1].startswith("PASS A3")
