import csv
import json
from pathlib import Path

import numpy as np
import pytest

from mfg_stable import Coupling, Problem, build_mesh, newton_solve
from mfg_stable.analyze import certify_stability
from mfg_stable.cli import EXIT_OK, EXIT_SOLVER, EXIT_VALIDATION, main
from mfg_stable.config import validate_document

from conftest import start

DATA = Path(__file__).parent / "data"


def run(tmp_path, doc, name="run"):
    cfg = tmp_path / f"{name}.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / name
    code = main(["--config", str(cfg), "--out", str(out)])
    return code, out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_zero_coupling_solve(tmp_path):
    doc = {"experiment": "solve", "dim": 1, "n": 32, "lambda": 1.0, "coupling": {"family": "zero"}}
    code, out = run(tmp_path, doc)
    assert code == EXIT_OK
    s = json.loads((out / "summary.json").read_text())
    assert s["residual"] < 1e-13
    assert s["mass"] == pytest.approx(1.0, abs=1e-13)
    assert s["stability"]["stable"] is True
    rows = read_csv(out / "fields_u.csv")
    assert list(rows[0]) == ["x", "u"] and len(rows) == 32
    assert list(read_csv(out / "fields_m.csv")[0]) == ["x", "m"]
    hist = read_csv(out / "history.csv")
    assert list(hist[0]) == ["k", "residual", "step_norm"] and hist[0]["step_norm"] == "NA"


def test_2d_fields_have_two_coordinates(tmp_path):
    code, out = run(tmp_path, {"experiment": "solve", "dim": 2, "n": 4, "lambda": 1.0})
    assert code == EXIT_OK
    assert list(read_csv(out / "fields_m.csv")[0]) == ["x", "y", "m"]


def test_atan_solve_matches_golden_and_library(tmp_path):
    code, out = run(tmp_path, json.loads((DATA / "atan_solve.json").read_text()))
    assert code == EXIT_OK
    got = json.loads((out / "summary.json").read_text())
    golden = json.loads((DATA / "atan_solve.golden.json").read_text())

    def compare(a, b, path=""):
        if isinstance(b, dict):
            for k in b:
                compare(a[k], b[k], f"{path}.{k}")
        elif isinstance(b, float) and path.endswith("residual"):
            assert a < 1e-13, path
        elif isinstance(b, float):
            assert a == pytest.approx(b, rel=1e-8, abs=1e-12), path
        else:
            assert a == b, path

    compare(got, golden)

    mesh = build_mesh(1, 64)
    p = Problem.build(mesh, 1.0, Coupling.atan(1.0), "cosine", 0.5)
    s, rep = newton_solve(p, start(p))
    assert got["iterations"] == rep.iterations
    assert got["stability"]["sigma_min"] == pytest.approx(certify_stability(p, s).sigma_min, rel=1e-10)
    u = np.array([float(r["u"]) for r in read_csv(out / "fields_u.csv")])
    np.testing.assert_array_equal(u, s.u.coeffs)  # 17 digits round-trip exactly


def test_summary_validates_against_schema(tmp_path):
    _, out = run(tmp_path, json.loads((DATA / "atan_solve.json").read_text()))
    validate_document(json.loads((out / "summary.json").read_text()), "summary")


def test_malformed_amplitude(tmp_path, capsys):
    doc = {"experiment": "solve", "dim": 1, "n": 8, "lambda": 1.0, "m0": {"family": "cosine", "amplitude": 1.5}}
    code, _ = run(tmp_path, doc)
    assert code == EXIT_VALIDATION
    assert "m0.amplitude" in capsys.readouterr().err


def test_solver_failure_exit_code(tmp_path, capsys):
    doc = {
        "experiment": "solve",
        "dim": 1,
        "n": 32,
        "lambda": 1.0,
        "coupling": {"family": "atan"},
        "m0": {"family": "cosine", "amplitude": 0.5},
        "solver": {"max_iter": 1},
    }
    code, out = run(tmp_path, doc)
    assert code == EXIT_SOLVER
    assert "max-iterations" in capsys.readouterr().err
    s = json.loads((out / "summary.json").read_text())
    assert s["status"] == "failed" and s["failure"]["kind"] == "max-iterations"


def test_determinism(tmp_path):
    doc = {"experiment": "newton-rates", "dim": 1, "n": 32, "lambda": 1.0, "coupling": {"family": "atan"},
           "m0": {"family": "cosine", "amplitude": 0.5}}
    _, a = run(tmp_path, doc, "a")
    _, b = run(tmp_path, doc, "b")
    for name in ("newton_rates.csv", "history.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_newton_rates_trivial(tmp_path):
    code, out = run(tmp_path, {"experiment": "newton-rates", "dim": 1, "n": 16, "lambda": 1.0})
    rows = read_csv(out / "newton_rates.csv")
    assert code == EXIT_OK and len(rows) == 1
    assert float(rows[0]["residual"]) < 1e-13
    assert rows[0]["quad_ratio"] == "NA"


def test_newton_rates_quadratic_vs_picard_linear(tmp_path):
    doc = {"experiment": "newton-rates", "dim": 1, "n": 64, "lambda": 1.0, "coupling": {"family": "atan"},
           "m0": {"family": "cosine", "amplitude": 0.5}}
    _, out = run(tmp_path, doc, "newton")
    q = [float(r["quad_ratio"]) for r in read_csv(out / "newton_rates.csv") if r["quad_ratio"] != "NA"]
    assert len(q) >= 2
    assert max(q) / min(q) <= 100
    doc["solver"] = {"method": "picard"}
    _, out = run(tmp_path, doc, "picard")
    lin = [float(r["linear_ratio"]) for r in read_csv(out / "newton_rates.csv")[2:]]
    assert all(0.3 < r < 0.7 for r in lin)  # geometric decay at the damping rate


def test_converge_zero_coupling(tmp_path):
    doc = {"experiment": "converge", "dim": 1, "lambda": 1.0, "n_list": [8, 16, 32], "reference_n": 128}
    code, out = run(tmp_path, doc)
    rows = read_csv(out / "converge.csv")
    assert code == EXIT_OK
    assert list(rows[0])[:4] == ["n", "h", "err_u_H1", "err_u_L2"]
    for r in rows:
        assert float(r["err_u_H1"]) <= 1e-13 and float(r["err_m_L2"]) <= 1e-13
        assert r["rate_u"] == "NA" and r["rate_m"] == "NA"
    assert "reference" in json.loads((out / "summary.json").read_text())["methodology"]


def test_converge_manufactured_rates(tmp_path):
    doc = {"experiment": "converge", "dim": 1, "lambda": 1.0, "n_list": [16, 32, 64], "manufactured": True,
           "coupling": {"family": "atan"}, "m0": {"family": "cosine", "amplitude": 0.5}}
    _, out = run(tmp_path, doc)
    last = read_csv(out / "converge.csv")[-1]
    assert float(last["rate_u"]) == pytest.approx(1.0, abs=0.05)
    assert float(last["rate_u_L2"]) == pytest.approx(2.0, abs=0.1)


def test_stability_sweep_monotone(tmp_path):
    doc = {"experiment": "stability-sweep", "dim": 1, "n": 32, "lambda_list": [0.5, 1, 2, 5],
           "coupling": {"family": "atan"}, "m0": {"family": "cosine", "amplitude": 0.5}}
    code, out = run(tmp_path, doc)
    rows = read_csv(out / "stability_sweep.csv")
    assert code == EXIT_OK and [r["stable"] for r in rows] == ["true"] * 4
    assert list(rows[0]) == ["lambda", "sigma_min", "K_hat", "M_hat", "Lambda_hat", "monotone",
                             "large_lambda", "stable", "status"]


def test_stability_sweep_crossing_lambda_hat(tmp_path):
    doc = {"experiment": "stability-sweep", "dim": 1, "n": 32, "lambda_list": [2, 4, 8, 16],
           "coupling": {"family": "neg_atan"}, "m0": {"family": "cosine", "amplitude": 0.5}}
    _, out = run(tmp_path, doc)
    rows = read_csv(out / "stability_sweep.csv")
    above = [r for r in rows if float(r["lambda"]) > float(r["Lambda_hat"])]
    assert above and all(r["stable"] == "true" and r["large_lambda"] == "true" for r in above)
    assert any(float(r["lambda"]) < float(r["Lambda_hat"]) for r in rows)


def test_stability_sweep_records_failures(tmp_path):
    doc = {"experiment": "stability-sweep", "dim": 1, "n": 32, "lambda_list": [1, 2],
           "coupling": {"family": "atan", "scale": 3}, "m0": {"family": "cosine", "amplitude": 0.9},
           "solver": {"max_iter": 1}}
    code, out = run(tmp_path, doc)
    rows = read_csv(out / "stability_sweep.csv")
    assert code == EXIT_OK and len(rows) == 2
    assert all(r["status"] == "max-iterations" and r["sigma_min"] == "NA" for r in rows)


SENS = {"experiment": "sensitivity", "dim": 1, "n": 64, "lambda": 1.0, "coupling": {"family": "atan"},
        "m0": {"family": "cosine", "amplitude": 0.5}}


def test_sensitivity_null_perturbation(tmp_path):
    doc = {**SENS, "perturbation": {"f_hat": {"family": "zero"}, "m1": {"family": "cosine", "amplitude": 0.5}}}
    code, out = run(tmp_path, doc)
    assert code == EXIT_OK
    assert [r["remainder"] for r in read_csv(out / "sensitivity.csv")] == ["0", "0", "0"]
    for name in ("delta_u.csv", "delta_m.csv", "fields_u.csv", "fields_m.csv", "history.csv"):
        assert (out / name).exists()


def test_sensitivity_measure_branch(tmp_path):
    doc = {**SENS, "perturbation": {"f_hat": {"family": "zero"},
                                    "m1": {"family": "cosine", "amplitude": 0.5, "shift": 0.25}}}
    code, out = run(tmp_path, doc)
    assert code == EXIT_OK
    assert json.loads((out / "sensitivity.json").read_text())["observed_order"] >= 1.8


def test_sensitivity_refuses_unstable(tmp_path, capsys):
    doc = {**SENS, "stability_threshold": 10.0,
           "perturbation": {"f_hat": {"family": "zero"}, "m1": {"family": "uniform"}}}
    code, out = run(tmp_path, doc)
    assert code == EXIT_SOLVER
    assert "unstable-solution" in capsys.readouterr().err
    assert json.loads((out / "summary.json").read_text())["status"] == "refused"
    assert not (out / "sensitivity.csv").exists()


def test_csv_float_format(tmp_path):
    _, out = run(tmp_path, {"experiment": "solve", "dim": 1, "n": 8, "lambda": 3.0,
                            "coupling": {"family": "atan"}, "m0": {"family": "cosine", "amplitude": 0.3}})
    for row in read_csv(out / "fields_u.csv"):
        v = row["u"]
        assert v == "%.17g" % float(v)


@pytest.mark.slow
def test_converge_reference_rates(tmp_path):
    doc = {"experiment": "converge", "dim": 1, "lambda": 1.0, "n_list": [16, 32, 64, 128], "reference_n": 2048,
           "coupling": {"family": "atan"}, "m0": {"family": "cosine", "amplitude": 0.5}}
    _, out = run(tmp_path, doc)
    last = read_csv(out / "converge.csv")[-1]
    assert float(last["rate_u"]) >= 1.0 and float(last["rate_m"]) >= 1.0
