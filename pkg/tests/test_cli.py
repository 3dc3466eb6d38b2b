import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pareto_impact import cli
from pareto_impact.scenario import scenario_to_document
from pareto_impact.solver import SolverError

import oracles
from corpus import log_cosh, mixed_small, random_exponential

SHIPPED = Path(__file__).resolve().parent.parent / "scenarios"


@pytest.fixture
def write_scenario(tmp_path):
    def write(problem, name="s.json"):
        path = tmp_path / name
        path.write_text(json.dumps(scenario_to_document(problem)))
        return str(path)
    return write


@pytest.fixture
def exp1(write_scenario):
    return write_scenario(log_cosh(), "exp1.json")


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_price_log_cosh(capsys, exp1):
    code, out, _ = run(capsys, "price", "-s", exp1, "-q", "1")
    rep = json.loads(out)
    assert code == 0
    assert rep["x"] == pytest.approx(oracles.LN_COSH_1, abs=1e-14)
    assert rep["gradient"] == pytest.approx([oracles.TANH_1], abs=1e-14)
    assert rep["investor_pays_for_q"] == pytest.approx(oracles.LN_COSH_1, abs=1e-14)
    assert set(rep) >= {"x", "w", "gradient", "u0_residuals", "iterations"}


def test_price_zero_order(capsys, exp1):
    code, out, _ = run(capsys, "price", "-s", exp1, "-q", "0")
    rep = json.loads(out)
    assert code == 0 and rep["x"] == 0.0 and rep["w"] == [1.0]


def test_price_sign_convention(capsys, write_scenario):
    path = write_scenario(mixed_small())
    rep = json.loads(run(capsys, "price", "-s", path, "-q", "1,0")[1])
    neg = json.loads(run(capsys, "price", "-s", path, "-q=-1,0")[1])
    assert rep["investor_pays_for_q"] == pytest.approx(neg["x"], abs=1e-12)


@pytest.mark.parametrize("order", ["a,b", "1,2", "nan"])
def test_price_rejects_bad_orders(capsys, exp1, order):
    code, out, err = run(capsys, "price", "-s", exp1, "-q", order)
    assert code == 1 and out == "" and err.startswith("error:")


def test_missing_scenario(capsys, tmp_path):
    code, _, err = run(capsys, "price", "-s", str(tmp_path / "nope.json"), "-q", "1")
    assert code == 1 and "not found" in err


def test_unknown_flag(capsys, exp1):
    assert cli.main(["price", "-s", exp1, "-q", "1", "--bogus"]) == 1


def test_solver_failure_exit_code(capsys, exp1, monkeypatch):
    def boom(*a, **k):
        raise SolverError("continuation stalled")
    monkeypatch.setattr(cli, "solve_indifference", boom)
    code, _, err = run(capsys, "price", "-s", exp1, "-q", "1")
    assert code == 2 and "continuation stalled" in err


def _csv(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_curve_log_cosh(capsys, exp1):
    code, out, _ = run(capsys, "curve", "-s", exp1, "--axis", "1", "--from", "-2", "--to", "2", "--steps", "5")
    assert code == 0
    assert out.splitlines()[0] == ",".join(cli.CURVE_COLUMNS)
    rows = _csv(out)
    x = [float(r["x"]) for r in rows]
    expected = [oracles.LN_COSH_2, oracles.LN_COSH_1, 0.0, oracles.LN_COSH_1, oracles.LN_COSH_2]
    np.testing.assert_allclose(x, expected, atol=1e-14)
    assert all(r["status"] == "ok" for r in rows)
    assert [float(r["quad1"]) for r in rows] == [0.0] * 5


def test_curve_endpoints_only(capsys, exp1):
    rows = _csv(run(capsys, "curve", "-s", exp1, "--from", "-0.5", "--to", "1.5", "--steps", "2")[1])
    assert [float(r["q_j"]) for r in rows] == [-0.5, 1.5]


def test_curve_even_on_symmetric_instance(capsys, exp1):
    rows = _csv(run(capsys, "curve", "-s", exp1, "--from", "-3", "--to", "3", "--steps", "13")[1])
    x = np.array([float(r["x"]) for r in rows])
    np.testing.assert_allclose(x, x[::-1], atol=1e-10)


def test_curve_is_bit_identical(capsys, write_scenario):
    path = write_scenario(mixed_small())
    args = ("curve", "-s", path, "--axis", "2", "--from", "-1", "--to", "1", "--steps", "7", "-q", "0.3,0")
    first = run(capsys, *args)[1]
    assert run(capsys, *args)[1] == first
    assert "e+" not in first.split("\n")[0]


@pytest.mark.parametrize("argv", [["--axis", "2"], ["--axis", "0"], ["--steps", "1"]])
def test_curve_validation(capsys, exp1, argv):
    assert run(capsys, "curve", "-s", exp1, *argv)[0] == 1


def test_curve_json_and_plot(capsys, exp1, tmp_path):
    pytest.importorskip("matplotlib")
    png = tmp_path / "curve.png"
    out_json = tmp_path / "curve.json"
    code = cli.main(["curve", "-s", exp1, "--steps", "4", "--format", "json", "--out", str(out_json), "--plot", str(png)])
    assert code == 0
    rows = json.loads(out_json.read_text())["rows"]
    assert len(rows) == 4
    assert png.stat().st_size > 0


def test_curve_records_failed_points(capsys, exp1, monkeypatch):
    real = cli.solve_indifference

    def flaky(problem, q, start=None):
        if q[0] > 0.5:
            raise SolverError("synthetic failure")
        return real(problem, q, start=start)

    monkeypatch.setattr(cli, "solve_indifference", flaky)
    code, out, _ = run(capsys, "curve", "-s", exp1, "--from", "0", "--to", "1", "--steps", "3")
    rows = _csv(out)
    assert code == 0
    assert [r["status"] for r in rows][:2] == ["ok", "ok"]
    assert rows[2]["status"].startswith("failed") and rows[2]["x"] == "nan"


def test_impact_log_cosh(capsys, exp1):
    code, out, _ = run(capsys, "impact", "-s", exp1, "-q", "1", "--dq", "0.1")
    rep = json.loads(out)
    assert code == 0
    assert rep["gradient"] == pytest.approx([oracles.TANH_1], abs=1e-14)
    assert rep["H"][0][0] == pytest.approx(oracles.SECH2_1, rel=1e-13)
    e = rep["expansion"]
    assert e["residual"] == pytest.approx(e["actual"] - e["predicted"], abs=1e-17)
    assert e["actual"] == pytest.approx(np.log(np.cosh(1.1)) - oracles.LN_COSH_1, abs=1e-13)
    assert rep["quad_terms"]["quad1"] == 0.0


def test_impact_exponential_quad1_zero(capsys, write_scenario):
    path = write_scenario(random_exponential(1))
    rep = json.loads(run(capsys, "impact", "-s", path, "-q", "0.2,-0.4,1", "--dq", "0.3,0.1,-0.2")[1])
    assert rep["quad_terms"]["quad1"] <= 1e-12
    assert all(rep["weight_variance"]["vanish"])


def test_impact_zero_increment(capsys, write_scenario):
    path = write_scenario(mixed_small())
    rep = json.loads(run(capsys, "impact", "-s", path, "-q", "0.5,0.5", "--dq", "0,0")[1])
    assert rep["quad_terms"] == {"quad1": 0.0, "quad2": 0.0, "quad3": 0.0}
    assert rep["expansion"]["residual"] == 0.0


def test_check_fast_passes(capsys, exp1):
    code, out, _ = run(capsys, "check", "-s", exp1, "--level", "fast")
    assert code == 0 and json.loads(out)["passed"]


def test_check_rejects_corrupted_scenario(capsys, tmp_path):
    doc = scenario_to_document(log_cosh())
    doc["states"][0]["prob"] = 0.4
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(doc))
    code, out, err = run(capsys, "check", "-s", str(path))
    assert code == 1 and out == "" and "outside tolerance" in err


def test_check_full_mixed(capsys, write_scenario):
    path = write_scenario(mixed_small())
    code, out, _ = run(capsys, "check", "-s", path, "--level", "full")
    rep = json.loads(out)
    assert code == 0, rep["failing"]
    assert rep["details"]["quad1_expected_nonzero"]
    assert rep["details"]["quad_terms"]["quad1"] > 0
    assert rep["checks"]["brute_force_x"] and rep["checks"]["conjugacy"]


def test_check_failure_exit_code(capsys, exp1, monkeypatch):
    monkeypatch.setattr(cli, "run_checks", lambda p, level: {"passed": False, "failing": ["hessian_law"]})
    code, _, err = run(capsys, "check", "-s", exp1)
    assert code == 3 and "hessian_law" in err


@pytest.mark.parametrize("name", ["exp1.json", "mixed.json"])
def test_shipped_scenarios_load(capsys, name):
    code, out, _ = run(capsys, "price", "-s", str(SHIPPED / name), "-q", ",".join(["0.5"] * (1 if name == "exp1.json" else 2)))
    assert code == 0


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "pareto_impact", "price", "-s", str(SHIPPED / "exp1.json"), "-q", "1"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["x"] == pytest.approx(oracles.LN_COSH_1, abs=1e-14)
