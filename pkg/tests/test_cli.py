import json
import subprocess
import sys

import numpy as np
import pytest

from optspline.cli import EXIT_INVALID, EXIT_IO, EXIT_OK, METHODS, main
from optspline.spline import Spline

REFERENCE = {"preset": "double-integrator", "params": {"sigma_p": 4.0, "sigma_m": 1.0},
           "dt": 0.01, "horizon": [0.0, 10.0], "x0": [10.0, 0.0], "f0": 5.0, "seed": 3,
           "scheme": "paper-verlet"}
DI = ["--preset", "double-integrator", "--param", "sigma_p=4", "--param", "sigma_m=1"]


def write_config(path, **changes):
    conf = dict(REFERENCE, **changes)
    path.write_text(json.dumps(conf))
    return path


@pytest.fixture
def reference_run(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out)]) == EXIT_OK
    return out


def test_simulate_reference_counts(reference_run):
    assert len((reference_run / "trajectory.csv").read_text().splitlines()) == 1002
    assert len((reference_run / "measurements.csv").read_text().splitlines()) == 52
    manifest = json.loads((reference_run / "manifest.json").read_text())
    assert {"seed", "scheme", "preset", "params", "tool_version"} <= set(manifest)
    assert manifest["seed"] == 3 and manifest["scheme"] == "paper-verlet"


def test_simulate_zero_forcing(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", params={"sigma_p": 4.0, "sigma_m": 1.0})
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out),
                 "--sigma-p", "0", "--x0", "10", "0"]) == EXIT_OK
    data = np.loadtxt(out / "trajectory.csv", delimiter=",", skiprows=1)
    np.testing.assert_array_equal(data[:, 1], 10.0)
    np.testing.assert_array_equal(data[:, 2], 0.0)


def test_simulate_flags_override_config(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(out), "--seed", "9",
                 "--tK", "2"]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 9 and manifest["params"]["horizon"] == [0.0, 2.0]
    assert len((out / "trajectory.csv").read_text().splitlines()) == 202


def test_simulate_is_byte_reproducible(tmp_path):
    cfg = write_config(tmp_path / "cfg.json")
    for name in ("a", "b"):
        main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path / name)])
    for f in ("trajectory.csv", "measurements.csv", "manifest.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_simulate_config_errors(tmp_path):
    assert main(["simulate", "--config", str(tmp_path / "missing.json")]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["simulate", "--config", str(bad)]) == EXIT_IO
    cfg = write_config(tmp_path / "cfg.json", dt=0.03)
    assert main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)]) == EXIT_IO


def test_enrich_then_verify(reference_run, tmp_path):
    meas = str(reference_run / "measurements.csv")
    spline = tmp_path / "spline.json"
    samples = tmp_path / "dense.csv"
    assert main(["enrich", meas, *DI, "--spline", str(spline), "--samples", str(samples)]) == 0
    rows = samples.read_text().splitlines()
    assert rows[0] == "t,x1,x2,v1"
    assert len(rows) == 1 + 50 * 100 + 1
    report = tmp_path / "report.json"
    assert main(["verify", str(spline), meas, *DI, "--out", str(report)]) == EXIT_OK
    assert json.loads(report.read_text())["verified"] is True


def test_verify_detects_corruption(reference_run, tmp_path):
    meas = str(reference_run / "measurements.csv")
    spline = tmp_path / "spline.json"
    main(["enrich", meas, *DI, "--spline", str(spline)])
    doc = json.loads(spline.read_text())
    doc["segments"][3]["c_x"][0] += 1e-3
    spline.write_text(json.dumps(doc))
    report = tmp_path / "report.json"
    assert main(["verify", str(spline), meas, *DI, "--out", str(report)]) == EXIT_INVALID
    assert json.loads(report.read_text())["violations"]


def test_verify_mismatched_preset(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", preset="harmonic", scheme="euler-maruyama",
                       params={"omega": 2.0, "sigma_p": 1.0, "sigma_m": 0.3}, f0=1.0,
                       horizon=[0.0, 10.0], x0=[1.0, 0.0])
    main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)])
    meas = str(tmp_path / "measurements.csv")
    harm = ["--preset", "harmonic", "--param", "omega=2", "--param", "sigma_p=1",
            "--param", "sigma_m=0.3"]
    spline = tmp_path / "spline.json"
    assert main(["enrich", meas, *harm, "--spline", str(spline)]) == EXIT_OK
    assert Spline.from_json(spline).kind == "linear-gaussian"
    report = tmp_path / "report.json"
    di = ["--preset", "double-integrator", "--param", "sigma_p=1", "--param", "sigma_m=0.3"]
    assert main(["verify", str(spline), meas, *di, "--out", str(report)]) == EXIT_INVALID
    assert "r22" in json.loads(report.read_text())["violations"]


def test_enrich_single_measurement(tmp_path, capsys):
    meas = tmp_path / "one.csv"
    meas.write_text("t,y1\n0.0,1.0\n")
    code = main(["enrich", str(meas), *DI, "--spline", str(tmp_path / "s.json")])
    assert code == EXIT_INVALID
    assert "need K" in capsys.readouterr().err


def test_missing_inputs_are_io_errors(tmp_path):
    assert main(["enrich", str(tmp_path / "none.csv"), *DI,
                 "--spline", str(tmp_path / "s.json")]) == EXIT_IO
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n0.0,1.0\n1.0,2.0\n")
    assert main(["verify", str(tmp_path / "none.json"), str(meas), *DI]) == EXIT_IO
    bad = tmp_path / "bad.json"
    bad.write_text("{}")
    assert main(["verify", str(bad), str(meas), *DI]) == EXIT_IO


def test_unknown_preset_is_rejected(tmp_path):
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n0.0,1.0\n1.0,2.0\n")
    code = main(["enrich", str(meas), "--preset", "rocket", "--spline", str(tmp_path / "s")])
    assert code in (EXIT_INVALID, EXIT_IO)


@pytest.mark.parametrize("preset,params", [
    ("alpha", ["alpha=2", "sigma_p=1", "sigma_m=0.5"]),
    ("pendulum", ["sigma_p=0.3", "sigma_m=0.02"]),
])
def test_enrich_nonlinear_presets(tmp_path, preset, params):
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n0.0,0.03\n0.5,-0.01\n1.0,0.02\n1.5,0.04\n")
    args = ["--preset", preset] + [x for p in params for x in ("--param", p)]
    spline = tmp_path / "s.json"
    assert main(["enrich", str(meas), *args, "--spline", str(spline)]) == EXIT_OK
    assert main(["verify", str(spline), str(meas), *args, "--tol", "1e-6",
                 "--out", str(tmp_path / "r.json")]) == EXIT_OK


def test_compare_line_truth(tmp_path):
    t = np.linspace(0.0, 2.0, 201)
    truth = tmp_path / "truth.csv"
    truth.write_text("t,x1,x2\n" + "".join(f"{a},{1 + 2 * a},2.0\n" for a in t))
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n" + "".join(f"{a},{1 + 2 * a}\n" for a in t[::50]))
    out = tmp_path / "cmp"
    assert main(["compare", str(meas), str(truth), *DI, "--methods",
                 "optimal-spline,finite-difference", "--out-dir", str(out)]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())["methods"]
    assert metrics["optimal-spline"]["knot_position_rmse"] <= 1e-9
    assert metrics["finite-difference"]["position_rmse"] <= 1e-9
    assert (out / "optimal-spline.csv").is_file()


def test_compare_harmonic_vs_cubic(tmp_path):
    cfg = write_config(tmp_path / "cfg.json", preset="harmonic", scheme="euler-maruyama",
                       params={"omega": 2.0, "sigma_p": 1.0, "sigma_m": 0.3}, f0=1.0,
                       dt=0.001, horizon=[0.0, 20.0], x0=[1.0, 0.0], seed=1)
    main(["simulate", "--config", str(cfg), "--out-dir", str(tmp_path)])
    harm = ["--preset", "harmonic", "--param", "omega=2", "--param", "sigma_p=1",
            "--param", "sigma_m=0.3"]
    out = tmp_path / "cmp"
    assert main(["compare", str(tmp_path / "measurements.csv"), str(tmp_path / "trajectory.csv"),
                 *harm, "--methods", "harmonic-spline,cubic-spline",
                 "--out-dir", str(out)]) == EXIT_OK
    metrics = json.loads((out / "metrics.json").read_text())["methods"]
    for m in ("harmonic-spline", "cubic-spline"):
        assert metrics[m]["position_rmse"] > 0 and "velocity_rmse" in metrics[m]


def test_compare_unknown_method(tmp_path, capsys):
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n0.0,1.0\n1.0,2.0\n")
    code = main(["compare", str(meas), str(meas), *DI, "--methods", "magic"])
    assert code == EXIT_INVALID
    err = capsys.readouterr().err
    assert all(m in err for m in METHODS)


def test_compare_truth_must_cover_horizon(tmp_path):
    truth = tmp_path / "truth.csv"
    truth.write_text("t,x1,x2\n0.0,0.0,0.0\n0.5,0.0,0.0\n")
    meas = tmp_path / "m.csv"
    meas.write_text("t,y1\n0.0,1.0\n1.0,2.0\n")
    assert main(["compare", str(meas), str(truth), *DI, "--out-dir", str(tmp_path)]) \
        == EXIT_INVALID


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "optspline.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.strip()
