import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from fdadegrade import __version__
from fdadegrade.cli import main
from fdadegrade.fpca import FpcaModel
from fdadegrade.smoothing import uniform_grid


@pytest.fixture(scope="module")
def sim_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "train.csv"
    assert main(["simulate", "--model", "1", "--n", "100", "--scenario", "complete",
                 "--seed", "7", "--output", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def model_file(sim_csv):
    path = sim_csv.with_name("model.json")
    assert main(["fit", "--input", str(sim_csv), "--horizon", "1", "--k-rule", "fve",
                 "--output", str(path)]) == 0
    return path


def _write(path, text):
    path.write_text(text)
    return str(path)


def test_simulate_deterministic(sim_csv, tmp_path):
    again = tmp_path / "again.csv"
    main(["simulate", "--model", "1", "--n", "100", "--scenario", "complete", "--seed", "7",
          "--output", str(again)])
    assert again.read_bytes() == sim_csv.read_bytes()
    rows = list(csv.reader(sim_csv.open()))
    assert rows[0] == ["signal_id", "time", "value"]
    assert len({r[0] for r in rows[1:]}) == 100


def test_fit_recovers_one_component(model_file, capsys):
    model = FpcaModel.from_json(model_file.read_text())
    assert model.K == 1
    assert model.eigenvalues[0] == pytest.approx(45 / 4, rel=0.5)


def test_fit_report_and_byte_identical(sim_csv, model_file, tmp_path, capsys):
    again = tmp_path / "m.json"
    capsys.readouterr()
    main(["fit", "--input", str(sim_csv), "--horizon", "1", "--k-rule", "fve",
          "--output", str(again)])
    report = json.loads(capsys.readouterr().out)
    assert again.read_bytes() == model_file.read_bytes()
    assert report["num_components"] == 1 and report["n_signals"] == 100
    for key in ("mean_bandwidth", "cov_bandwidth", "noise_variance", "eigenvalue_spectrum",
                "n_observations"):
        assert key in report


def test_fit_empty_input(tmp_path, capsys):
    path = _write(tmp_path / "empty.csv", "")
    assert main(["fit", "--input", path, "--horizon", "1"]) == 3
    assert main(["--error-json", "fit", "--input", path, "--horizon", "1"]) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["exit_status"] == 3 and err["error"] == "SignalError"


def test_predict_prior_for_empty_signal(model_file, tmp_path, capsys):
    path = _write(tmp_path / "none.csv", "signal_id,time,value\n")
    capsys.readouterr()
    assert main(["predict", "--model", str(model_file), "--input", path,
                 "--threshold", "10"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["t_star"] == 0.0 and doc["signal_id"] == "0"
    lo, hi = doc["ci"]
    assert 0 <= lo <= doc["point_estimate"] <= hi <= 1


def test_predict_csv_several_units(model_file, tmp_path, capsys):
    path = _write(tmp_path / "u.csv", "signal_id,time,value\na,0.1,0.5\na,0.3,2.9\nb,0.2,1.0\n")
    capsys.readouterr()
    assert main(["predict", "--model", str(model_file), "--input", path, "--threshold", "10",
                 "--format", "csv"]) == 0
    rows = list(csv.DictReader(capsys.readouterr().out.splitlines()))
    assert [r["signal_id"] for r in rows] == ["a", "b"]
    assert float(rows[0]["t_star"]) == 0.3
    assert int(rows[0]["B"]) == 500


@pytest.mark.parametrize("text, status", [
    ("signal_id,time,value\na,1.5,3\n", 3),  # beyond the horizon
    ("signal_id,time,value\na,0.5,30\n", 4),  # already past the threshold
])
def test_predict_input_errors(model_file, tmp_path, text, status, capsys):
    path = _write(tmp_path / "bad.csv", text)
    assert main(["--error-json", "predict", "--model", str(model_file), "--input", path,
                 "--threshold", "10"]) == status
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == ("DomainError" if status == 3 else "AlreadyFailedError")


def test_predict_malformed_model(tmp_path):
    path = _write(tmp_path / "m.json", '{"grid": [0, 1]')
    assert main(["predict", "--model", path, "--threshold", "10"]) == 3
    assert main(["predict", "--model", str(tmp_path / "missing.json"), "--threshold", "10"]) == 3


def test_predict_degenerate_posterior(tmp_path, capsys):
    grid = uniform_grid(1.0, 101)
    model = FpcaModel(grid, 30 * grid**2, [1e-12], np.ones((1, 101)), 1.0)
    mpath = _write(tmp_path / "det.json", model.to_json())
    capsys.readouterr()
    assert main(["predict", "--model", mpath, "--threshold", "10", "--t-star", "0.2"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert abs(0.2 + doc["point_estimate"] - 1 / math.sqrt(3)) <= 0.01


def test_usage_errors(capsys):
    assert main(["simulate", "--model", "4"]) == 2
    assert main(["predict", "--threshold", "10"]) == 2
    assert main(["fit"]) == 2
    assert main(["benchmark", "--k-rule", "fve", "--num-components", "2"]) == 2
    assert main([]) == 2


def test_benchmark_table_and_manifest(tmp_path, capsys):
    out, man = tmp_path / "t.csv", tmp_path / "man.json"
    args = ["benchmark", "--model", "1", "--replications", "2", "--n-train", "40",
            "--n-valid", "6", "--bootstrap", "100", "--seed", "3", "--output", str(out),
            "--manifest", str(man)]
    assert main(args) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 9 * 2
    assert rows[0]["scenario"] == "sparse" and rows[0]["sampling"] == "nonuniform"
    doc = json.loads(man.read_text())
    assert doc["config"]["seed"] == 3 and doc["config"]["replications"] == 2
    first = out.read_bytes()
    assert main(args + ["--threads", "2"]) == 0
    assert out.read_bytes() == first


def test_version_and_module_entry():
    res = subprocess.run([sys.executable, "-m", "fdadegrade", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0
    assert __version__ in res.stdout
