import csv
import json
import math
import subprocess
import sys

import pytest

from adaptmeas import __version__
from adaptmeas.cli import main
from adaptmeas.experiments import DEFAULTS, EXPERIMENTS, write_table

SMALL = {
    "fringe": {"shots": 200},
    "backaction": {"shots_per_basis": 2000},
    "weakvalue": {"trials": 5000},
    "readout": {"trials": 5000},
    "coherence": {"trials": 5000, "times_us": [0, 10, 25, 100]},
    "feedback": {"trials": 5000, "budgets_us": [5, 30]},
}


def _config(tmp_path, name, **kw):
    path = tmp_path / f"{name}.json"
    path.write_text(json.dumps(kw))
    return str(path)


def _run(tmp_path, experiment, tag, seed=3, threads=None):
    cfg = _config(tmp_path, f"{experiment}-{tag}", experiment=experiment, seed=seed, parameters=SMALL[experiment])
    out = tmp_path / f"{experiment}-{tag}"
    args = ["run", "--config", cfg, "--out", str(out)]
    if threads:
        args += ["--threads", str(threads)]
    assert main(args) == 0
    return out


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("experiment", EXPERIMENTS)
def test_run_is_deterministic(tmp_path, experiment):
    a = _run(tmp_path, experiment, "a")
    b = _run(tmp_path, experiment, "b")
    manifest = json.loads((a / "manifest.json").read_text())
    assert manifest["seed"] == 3
    assert manifest["version"] == __version__
    assert manifest["config"]["experiment"] == experiment
    assert manifest["wall_clock_s"] >= 0
    assert manifest["files"]
    for name in manifest["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()
        rows = _read(a / name)
        assert len(rows) > 1
        assert all(len(r) == len(rows[0]) for r in rows)
        for r in rows[1:]:
            for v in r:
                try:
                    assert math.isfinite(float(v))
                except ValueError:
                    pass  # label column or unreported cell


def test_seed_changes_output(tmp_path):
    a = _run(tmp_path, "readout", "a", seed=1)
    b = _run(tmp_path, "readout", "b", seed=2)
    assert (a / "readout.csv").read_bytes() != (b / "readout.csv").read_bytes()


@pytest.mark.parametrize("experiment", ["coherence", "feedback"])
def test_threads_do_not_change_output(tmp_path, experiment):
    a = _run(tmp_path, experiment, "serial")
    b = _run(tmp_path, experiment, "pool", threads=2)
    for name in json.loads((a / "manifest.json").read_text())["files"]:
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_weakvalue_curve_peaks_at_85(tmp_path):
    out = _run(tmp_path, "weakvalue", "peak")
    rows = _read(out / "weakvalue.csv")
    header, body = rows[0], rows[1:]
    i_phi, i_wm = header.index("phi_deg"), header.index("W_m")
    best = max(body, key=lambda r: float(r[i_wm]))
    assert float(best[i_phi]) == 85.0
    assert float(best[i_wm]) == pytest.approx(11.4737, abs=1e-4)


def test_backaction_layout(tmp_path):
    out = _run(tmp_path, "backaction", "layout")
    rows = _read(out / "backaction.csv")
    header = rows[0]
    kinds = {(r[header.index("state")], r[header.index("kind")]) for r in rows[1:]}
    assert ("x", "unconditional") in kinds and ("x", "conditional_0") in kinds
    thetas = {float(r[header.index("theta_deg")]) for r in rows[1:]}
    assert thetas == {5.0, 30.0, 60.0, 90.0}
    for r in rows[1:]:
        if r[header.index("kind")] == "conditional_0":
            assert float(r[header.index("bloch_length")]) == pytest.approx(1, abs=1e-9)
        if r[header.index("state")] == "x" and r[header.index("kind")] == "unconditional":
            th = math.radians(float(r[header.index("theta_deg")]))
            assert float(r[header.index("x")]) == pytest.approx(math.cos(th), abs=1e-12)


def test_defaults_match_device_parameters():
    assert DEFAULTS["fringe"]["A_rad_per_s"] == pytest.approx(2 * math.pi * 2.184e6)
    assert DEFAULTS["fringe"]["T2star_s"] == 1.35e-6
    assert DEFAULTS["feedback"]["init_fidelity_electron"] == 0.983
    assert DEFAULTS["feedback"]["init_fidelity_nuclear"] == 0.95
    assert DEFAULTS["backaction"]["eps0"] == pytest.approx(0.147)
    assert DEFAULTS["backaction"]["eps1"] == pytest.approx(0.014)


# -- validation -------------------------------------------------------------------


@pytest.mark.parametrize(
    "config, key",
    [
        ({"experiment": "readout", "sed": 1}, "sed"),
        ({"experiment": "readout", "parameters": {"trails": 10}}, "parameters.trails"),
        ({"experiment": "readout", "parameters": {"trials": 0}}, "parameters.trials"),
        ({"experiment": "nope"}, "experiment"),
        ({"experiment": "readout", "seed": -1}, "seed"),
        ({"experiment": "readout", "seed": 2**64}, "seed"),
        ({"experiment": "readout", "parameters": []}, "parameters"),
    ],
)
def test_invalid_configs_name_the_key(tmp_path, capsys, config, key):
    cfg = _config(tmp_path, "bad", **config)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) != 0
    assert f"{key}:" in capsys.readouterr().err


def test_zero_trial_override_rejected(tmp_path, capsys):
    assert main(["run", "readout", "--trials-override", "0", "--out", str(tmp_path / "o")]) != 0
    assert "trials" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_trials_override_on_experiment_without_trials(tmp_path, capsys):
    assert main(["run", "fringe", "--trials-override", "5", "--out", str(tmp_path / "o")]) != 0


def test_bad_json(tmp_path, capsys):
    path = tmp_path / "x.json"
    path.write_text("{not json")
    assert main(["run", "--config", str(path)]) != 0
    assert "config:" in capsys.readouterr().err


def test_threads_env(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("ADAPTMEAS_THREADS", "zero")
    assert main(["run", "weakvalue", "--trials-override", "100", "--out", str(tmp_path / "o")]) != 0
    assert "ADAPTMEAS_THREADS" in capsys.readouterr().err


def test_schema_check_rejects_nan(tmp_path):
    with pytest.raises(ValueError):
        write_table(tmp_path / "t.csv", ["a", "b"], [[1.0, float("nan")]])
    with pytest.raises(ValueError):
        write_table(tmp_path / "t.csv", ["a", "b"], [[1.0]])
    assert not (tmp_path / "t.csv").exists()


# -- verify and calibrate ----------------------------------------------------------


def test_verify_zero_trials_is_validation_error(tmp_path, capsys):
    cfg = _config(tmp_path, "v", parameters={"trials": 0})
    assert main(["verify", "--config", cfg]) == 2
    assert "parameters.trials" in capsys.readouterr().err


def test_verify_mutation_fails_criterion_4(tmp_path, capsys):
    from adaptmeas import acceptance

    crit = acceptance.steering_identity(math.radians(1.0))
    assert not crit.passed
    assert acceptance.steering_identity(0.0).passed


def test_verify_cli_end_to_end(tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["verify", "--out", str(report)]) == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == 10
    cfg = _config(tmp_path, "mut", parameters={"theta2_offset_deg": 1.0})
    assert main(["verify", "--config", cfg]) == 1
    out = capsys.readouterr().out
    assert "[FAIL]  4." in out
    assert json.loads(report.read_text())[3]["passed"] is True


def test_calibrate(tmp_path, capsys):
    out = tmp_path / "cal.json"
    assert main(["calibrate", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["model"]["p_flip"] == pytest.approx(0.0170, abs=2e-4)
    assert set(rep["residuals"]) == set(rep["targets"])
    assert all(abs(rep["residuals"][k]) <= rep["tolerances"][k] for k in rep["residuals"])


def test_calibrate_infeasible(tmp_path, capsys):
    cfg = _config(tmp_path, "c", parameters={"qnd0_conventional": 1.5})
    assert main(["calibrate", "--config", cfg]) == 3
    assert "qnd0_conventional" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "adaptmeas", "--version"], capture_output=True, text=True)
    assert res.returncode == 0
    assert res.stdout.strip() == __version__
