import csv
import json
import subprocess
import sys

import pytest

from smdp_risk.cli import run
from smdp_risk.io import fixture_path, model_to_dict

from conftest import constant_cost_model

SMALL = ["--grid", "12x10", "--quad", "12"]


def read_csv(path):
    lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))


def header_lines(path):
    return [l for l in path.read_text().splitlines() if l.startswith("# ")]


@pytest.fixture
def model_file(tmp_path):
    doc = json.loads(fixture_path().read_text())
    p = tmp_path / "model.json"
    p.write_text(json.dumps(doc))
    return p


def test_validate(capsys, model_file):
    assert run(["validate", str(model_file)]) == 0
    assert capsys.readouterr().out.strip() == "OK"
    assert run(["validate", "maintenance"]) == 0


def test_validate_rejects_bad_rows(tmp_path, capsys):
    doc = model_to_dict(constant_cost_model())
    doc["transition"]["b"]["y"] = {"a": 0.5, "b": 0.4}
    p = tmp_path / "bad.json"
    p.write_text(json.dumps(doc))
    assert run(["validate", str(p)]) == 1
    assert "row not stochastic" in capsys.readouterr().err


def test_io_errors(tmp_path, capsys):
    assert run(["validate", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "junk.json").write_text("{not json")
    assert run(["validate", str(tmp_path / "junk.json")]) == 1
    assert run(["solve", "maintenance", "--horizon", "0", "--out", str(tmp_path)]) == 3
    assert run(["solve", "maintenance", "--grid", "12"]) == 3
    assert run(["bogus"]) == 3


def test_certify(capsys):
    assert run(["certify", "maintenance", "--delta", "0.1"]) == 0
    out = capsys.readouterr().out
    assert "delta = 0.1" in out and "epsilon =" in out and "rho =" in out


def test_solve_infinite_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert run(["solve", "maintenance", "--infinite", *SMALL, "--out", str(out)]) == 0
    for name in ("values.csv", "convergence.csv", "policy.json", "summary.json"):
        assert (out / name).exists()
    hdr = "\n".join(header_lines(out / "values.csv"))
    for key in ("model_hash", "utility", "grid", "quad_M", "tol", "seed"):
        assert f"# {key}:" in hdr
    rows = read_csv(out / "convergence.csv")
    assert rows and set(rows[0]) == {"n", "gap", "bound"}
    summary = json.loads((out / "summary.json").read_text())
    assert summary["header"]["model_hash"]
    assert set(summary["J"]) == {"good", "worn"}
    assert "J_inf(good)" in capsys.readouterr().out


def test_solve_nonconvergence_still_logs(tmp_path):
    out = tmp_path / "run"
    assert run(["solve", "maintenance", "--infinite", *SMALL, "--max-iter", "2", "--out", str(out)]) == 2
    assert len(read_csv(out / "convergence.csv")) == 2


def test_solve_exponential_h_table(tmp_path):
    out = tmp_path / "run"
    assert run(["solve", "maintenance", "--infinite", "--exponential", *SMALL, "--out", str(out)]) == 0
    rows = read_csv(out / "h_table.csv")
    assert set(rows[0]) == {"state", "w", "h"} and len(rows) == 2 * 12
    assert run(["solve", "maintenance", "--infinite", "--exponential", "--utility", "log1p", *SMALL,
                "--out", str(out)]) == 3


def test_finite_policy_roundtrip(tmp_path, capsys):
    out = tmp_path / "fin"
    assert run(["solve", "maintenance", "--horizon", "3", *SMALL, "--no-budget", "--out", str(out)]) == 0
    assert (out / "values_n3.csv").exists()
    pol = json.loads((out / "policy.json").read_text())
    assert pol["kind"] == "markov" and len(pol["tables"]) == 3
    capsys.readouterr()
    sim = tmp_path / "sim"
    args = ["simulate", "maintenance", "--policy", str(out / "policy.json"), "--horizon", "3",
            "--n-traj", "2000", "--seed", "4", "--out", str(sim)]
    assert run(args) == 0
    est = json.loads((sim / "simulation.json").read_text())["estimates"]
    assert set(est) == {"good", "worn"}
    rows = read_csv(sim / "trajectories.csv")
    assert len(rows) == 4000 and set(rows[0]) == {"state", "trajectory", "U_lower", "U_upper"}
    # a 3-jump Markov policy cannot drive 4 jumps: usage error
    args[args.index("--horizon") + 1] = "4"
    assert run(args) == 3


def test_improve_and_infinite_simulation(tmp_path):
    out = tmp_path / "inf"
    assert run(["solve", "maintenance", "--infinite", *SMALL, "--no-budget", "--out", str(out)]) == 0
    imp = tmp_path / "imp"
    assert run(["improve", "maintenance", "--policy", str(out / "policy.json"), "--out", str(imp)]) == 0
    summary = json.loads((imp / "summary.json").read_text())
    assert summary["improved"] is False
    assert summary["header"]["quad_M"] == 12  # inherited from the policy file
    assert run(["improve", "maintenance", "--policy", str(out / "policy.json"), "--max-iter", "2",
                "--out", str(imp)]) == 2
    sim = tmp_path / "sim"
    assert run(["simulate", "maintenance", "--policy", str(out / "policy.json"), "--infinite", "--tol", "1e-2",
                "--n-traj", "1000", "--state", "worn", "--out", str(sim)]) == 0
    est = json.loads((sim / "simulation.json").read_text())
    assert est["mode"] == "infinite" and set(est["estimates"]) == {"worn"}


def test_policy_grid_mismatch(tmp_path, model_file):
    out = tmp_path / "inf"
    assert run(["solve", "maintenance", "--infinite", *SMALL, "--no-budget", "--out", str(out)]) == 0
    doc = json.loads(model_file.read_text())
    doc["alpha"] *= 2  # same shape, different cost horizon
    other = tmp_path / "other.json"
    other.write_text(json.dumps(doc))
    assert run(["improve", str(other), "--policy", str(out / "policy.json"), "--out", str(tmp_path / "x")]) == 3


def test_compare(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert run(["compare", "maintenance", "--grid", "16x16", "--quad", "16", "--out", str(out)]) == 0
    line = capsys.readouterr().out.strip().splitlines()[-1]
    assert line.startswith("splitting residual ≤ ")
    assert (out / "compare.json").exists()


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "smdp_risk.cli", "validate", "maintenance"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and proc.stdout.strip() == "OK"
