"""Unit tests for fibertwin/main.py (command line)."""

import json
import re
from pathlib import Path

import pytest

CONFIGS = Path(__file__).resolve().parents[2] / "configs"


def _number(label, text):
    match = re.search(rf"{label}: ([0-9.e+-]+)", text)
    assert match, f"'{label}' not in output:\n{text}"
    return float(match.group(1))


def test_predict_defaults(capsys):
    from fibertwin.main import main

    assert main(["predict"]) == 0
    out = capsys.readouterr().out

    assert _number("gravitational phase shift", out) == pytest.approx(3.230e-5, rel=1e-3)
    assert _number("shot-noise phase ASD", out) == pytest.approx(4.42e-3, rel=2e-3)
    assert _number("fractional displacement ASD", out) == pytest.approx(1.4937e-14, rel=2e-3)


def test_predict_with_budget(capsys):
    from fibertwin.main import main

    code = main(["predict", "--budget", str(CONFIGS / "loss_budget.yml"), "--source-rate", "3.36e6"])
    out = capsys.readouterr().out

    assert code == 0
    assert "loss budget: 14.99 dB ± 0.04 dB (linear sum ± 0.10 dB)" in out
    assert "transmission: 3.17%" in out
    assert _number("detected rate", out) == pytest.approx(3.36e6 * 0.031696, rel=1e-3)


def test_predict_domain_error_exits_2(capsys):
    from fibertwin.main import main

    assert main(["predict", "--length", "-1"]) == 2
    assert "error:" in capsys.readouterr().err


def test_usage_errors_exit_2():
    from fibertwin.main import main

    assert main([]) == 2
    assert main(["calibrate"]) == 2
    assert main(["reproduce", "fig9"]) == 2


def test_version_exits_0(capsys):
    from fibertwin import __version__
    from fibertwin.main import main

    assert main(["--version"]) == 0
    assert __version__ in capsys.readouterr().out


def test_simulate_is_reproducible(tmp_path, scenario_yaml):
    from fibertwin.main import main

    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", str(scenario_yaml), "--out", str(first)]) == 0
    assert main(["simulate", str(scenario_yaml), "--out", str(second)]) == 0

    assert (first / "counts.bin").read_bytes() == (second / "counts.bin").read_bytes()
    assert (first / "counts.csv").read_bytes() == (second / "counts.csv").read_bytes()


def test_simulate_overrides(tmp_path, scenario_yaml):
    from fibertwin.main import main

    out = tmp_path / "sim"
    assert main(["simulate", str(scenario_yaml), "--out", str(out), "--seed", "7", "--duration", "60"]) == 0

    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 7
    assert manifest["scenario"]["duration_s"] == 60.0


def test_simulate_default_output_dir(scenario_yaml, isolated_output_dir):
    from fibertwin.main import main

    assert main(["simulate", str(scenario_yaml)]) == 0
    assert (isolated_output_dir / "simulate" / "counts.bin").exists()


def test_simulate_bad_config_exits_2(tmp_path, capsys):
    from fibertwin.main import main

    config = tmp_path / "bad.yml"
    config.write_text("seed: 1\nduration_s: 100\nloop:\n  mode: pid\n", encoding="utf-8")

    assert main(["simulate", str(config), "--out", str(tmp_path / "out")]) == 2
    assert "line 4" in capsys.readouterr().err


def test_simulate_missing_config_exits_1(tmp_path):
    from fibertwin.main import main

    assert main(["simulate", str(tmp_path / "nope.yml")]) == 1


def test_analyze_simulated_counts(tmp_path, scenario_yaml, capsys):
    from fibertwin.main import main

    sim = tmp_path / "sim"
    out = tmp_path / "analysis"
    assert main(["simulate", str(scenario_yaml), "--out", str(sim)]) == 0
    code = main(
        [
            "analyze",
            str(sim / "counts.bin"),
            "--ref-freq",
            "0.25",
            "--ref-rms",
            "2.1e-3",
            "--segments",
            "1",
            "--lpf",
            "0.05",
            "--out",
            str(out),
        ]
    )

    assert code == 0
    assert "analyzed 3000 bins" in capsys.readouterr().out
    summary = json.loads((out / "summary.json").read_text(encoding="utf-8"))
    assert summary["calibration_scales"][0] == pytest.approx(1.0, rel=0.3)
    manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
    assert manifest["seed"] == 42
    assert "counts.bin" in manifest["inputs"]


def test_analyze_malformed_counts_exits_2(tmp_path, capsys):
    from fibertwin.main import main

    counts = tmp_path / "counts.csv"
    counts.write_text("t_s,n1,n2\n0,10,12\n0.1,11\n", encoding="utf-8")

    assert main(["analyze", str(counts), "--out", str(tmp_path / "out")]) == 2
    assert "row 2" in capsys.readouterr().err


def test_analyze_needs_complete_reference(tmp_path):
    from fibertwin.main import main

    counts = tmp_path / "counts.csv"
    counts.write_text("t_s,n1,n2\n0,10,12\n0.1,11,9\n", encoding="utf-8")

    assert main(["analyze", str(counts), "--ref-freq", "0.25"]) == 2


def test_reproduce_table1(tmp_path, capsys):
    from fibertwin.main import main

    assert main(["reproduce", "table1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "table1: PASS" in out
    assert (tmp_path / "table1.csv").exists()


def test_reproduce_failure_exits_1(tmp_path, mocker):
    from fibertwin.main import main
    from fibertwin.services.reproduce import Report

    report = Report("table1")
    report.add("total_db", 15.5, "14.99", False)
    mocker.patch("fibertwin.main.ReproductionService.run", return_value=report)

    assert main(["reproduce", "table1", "--out", str(tmp_path)]) == 1


def test_unexpected_exception_exits_1(mocker, capsys):
    from fibertwin.main import main

    mocker.patch("fibertwin.main.shot_noise_asd", side_effect=RuntimeError("boom"))

    assert main(["predict"]) == 1
    assert "boom" in capsys.readouterr().err


def test_simulate_ensemble_with_threads(tmp_path, scenario_yaml, capsys):
    from fibertwin.main import main

    threaded, serial = tmp_path / "threaded", tmp_path / "serial"
    args = ["simulate", str(scenario_yaml), "--duration", "60", "--runs", "3"]
    assert main(args + ["--threads", "2", "--out", str(threaded)]) == 0
    assert main(args + ["--out", str(serial)]) == 0

    assert "simulated 3 runs of 600 bins" in capsys.readouterr().out
    seeds = set()
    for index in range(3):
        run = f"run_{index:03d}"
        assert (threaded / run / "counts.bin").read_bytes() == (serial / run / "counts.bin").read_bytes()
        seeds.add(json.loads((threaded / run / "manifest.json").read_text(encoding="utf-8"))["seed"])
    assert len(seeds) == 3


def test_simulate_rejects_zero_runs(tmp_path, scenario_yaml):
    from fibertwin.main import main

    assert main(["simulate", str(scenario_yaml), "--runs", "0", "--out", str(tmp_path)]) == 2


def test_analyze_several_files_with_threads(tmp_path, scenario_yaml, capsys):
    from fibertwin.main import main

    for seed in ("1", "2"):
        assert main(["simulate", str(scenario_yaml), "--seed", seed, "--out", str(tmp_path / f"sim{seed}")]) == 0
    out = tmp_path / "analysis"
    inputs = [str(tmp_path / "sim1" / "counts.bin"), str(tmp_path / "sim2" / "counts.bin")]

    assert main(["analyze", *inputs, "--threads", "2", "--out", str(out)]) == 0

    assert capsys.readouterr().out.count("analyzed 3000 bins") == 2
    first = json.loads((out / "000_counts" / "manifest.json").read_text(encoding="utf-8"))
    second = json.loads((out / "001_counts" / "manifest.json").read_text(encoding="utf-8"))
    assert (first["seed"], second["seed"]) == (1, 2)


def test_invalid_configuration_exits_1(mocker, capsys):
    import fibertwin.config as cfg
    from fibertwin.main import main

    mocker.patch.object(cfg.Config, "OUTPUT_DIR", "")

    assert main(["predict"]) == 1
    assert "Invalid configuration values: OUTPUT_DIR" in capsys.readouterr().err


def test_run_script_leaves_validation_to_main(mocker):
    import runpy

    import fibertwin.config as cfg

    validate = mocker.patch.object(cfg.Config, "validate", side_effect=ValueError("bad"))
    mocker.patch("fibertwin.main.main", return_value=0)

    with pytest.raises(SystemExit) as exit_info:
        runpy.run_path(str(CONFIGS.parent / "run.py"), run_name="__main__")

    assert exit_info.value.code == 0
    validate.assert_not_called()
