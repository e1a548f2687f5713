import json
import math

import numpy as np
import pandas as pd
import pytest

from conftest import SCENARIOS
from src.cli import main


def error_payload(stderr: str) -> dict:
    # log records share stderr with the error object
    return json.loads(stderr[stderr.index("{\n"):])


def read_tree(directory):
    return {path.name: path.read_bytes() for path in sorted(directory.iterdir())}


def test_simulate_two_level_kicks(tmp_path):
    code = main(["simulate", str(SCENARIOS / "two_level_kicks.json"), "--out", str(tmp_path), "--quiet"])
    assert code == 0

    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "simulate"
    assert "reduced_density.csv" in manifest["files"]
    assert "observable_sx.csv" in manifest["files"]
    assert "decoherence_meta.json" in manifest["files"]

    curves = pd.read_csv(tmp_path / "decoherence.csv")
    assert list(curves.columns) == ["t", "m", "n", "re_D", "im_D", "abs_D"]
    # samples from the first kick up to the second are skipped
    assert not ((curves["t"] >= 1.0) & (curves["t"] < 2.0)).any()
    late = curves[curves["t"] >= 2.0]
    assert len(late) == 21
    assert np.allclose(late["abs_D"], math.exp(-2.0), rtol=0, atol=1e-12)

    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["skipped_samples"] == 10
    assert summary["sanity"] == {"curves": True, "series": True}

    rho = pd.read_csv(tmp_path / "reduced_density.csv")
    assert list(rho.columns) == ["t", "m", "n", "re", "im"]
    assert len(rho) == 41 * 4


def test_simulate_is_byte_identical(tmp_path):
    scenario = str(SCENARIOS / "two_level_kicks.json")
    first, second, pooled = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["simulate", scenario, "--out", str(first), "--quiet"]) == 0
    assert main(["simulate", scenario, "--out", str(second), "--quiet"]) == 0
    assert main(["simulate", scenario, "--out", str(pooled), "--threads", "4", "--quiet"]) == 0
    assert read_tree(first) == read_tree(second) == read_tree(pooled)


def test_format_flag_limits_outputs(tmp_path):
    code = main(["simulate", str(SCENARIOS / "minimal.json"), "--out", str(tmp_path), "--format", "json", "--quiet"])
    assert code == 0
    names = set(json.loads((tmp_path / "manifest.json").read_text())["files"])
    assert "reduced_density.json" in names
    assert not any(name.endswith(".csv") for name in names)


def test_compare_free_precession(tmp_path, capsys):
    code = main(["compare", str(SCENARIOS / "free_precession.json"), "--out", str(tmp_path), "--quiet"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert {entry["status"] for entry in report["discrepancies"].values()} == {"ok"}
    assert (tmp_path / "compare_report.json").exists()


def test_compare_smoothed_kicks(tmp_path, capsys):
    code = main(["compare", str(SCENARIOS / "smoothed_kicks.json"), "--out", str(tmp_path), "--quiet"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert report["discrepancies"]["closed_vs_oracle"]["status"] == "ok"
    assert report["discrepancies"]["closed_vs_factorized"]["status"] == "not applicable"
    assert report["factorized"]["applicable"] is False
    assert report["factorized"]["first_non_uniform_t"] == pytest.approx(0.5)


def test_compare_tolerance_exceeded(tmp_path, capsys):
    scenario = json.loads((SCENARIOS / "smoothed_kicks.json").read_text())
    scenario["tolerances"] = {"closed_vs_oracle": 1e-300}
    scenario["oracle"] = {"dt": 0.002, "smoothing_width": 0.02}
    path = tmp_path / "tight.json"
    path.write_text(json.dumps(scenario))
    code = main(["compare", str(path), "--out", str(tmp_path / "out"), "--quiet"])
    report = json.loads(capsys.readouterr().out)
    assert code == 1
    assert report["discrepancies"]["closed_vs_oracle"]["status"] == "exceeded"


def test_validate_commuting_triple(tmp_path, capsys):
    code = main(["validate", str(SCENARIOS / "commuting_triple.json"), "--out", str(tmp_path), "--quiet"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert report["verdict"] == "accepted"
    assert report["spectra"]["system"] == pytest.approx([-1.0, 1.0], abs=1e-12)
    assert report["lappo_danilevsky_residual"] < 1e-12


def test_validate_noncommuting_pair(tmp_path, capsys):
    code = main(["validate", str(SCENARIOS / "noncommuting_pair.json"), "--out", str(tmp_path), "--quiet"])
    report = json.loads(capsys.readouterr().out)
    assert code == 1
    assert report["verdict"] == "rejected"
    assert report["reason"]["pair"] == ["HA", "X1"]
    assert report["reason"]["residual"] == pytest.approx(2 * math.sqrt(2), abs=1e-12)


def test_limit(capsys):
    code = main(["limit", str(SCENARIOS / "two_level_kicks.json"), "--quiet"])
    assert code == 0
    assert json.loads(capsys.readouterr().out) == {"sx": 0.0, "sz": 0.0}


def test_malformed_scenario(tmp_path, capsys):
    path = tmp_path / "broken.json"
    path.write_text("{\"system\": ", encoding="utf-8")
    code = main(["simulate", str(path), "--out", str(tmp_path / "out")])
    captured = capsys.readouterr()
    assert code == 2
    assert captured.out == ""
    payload = error_payload(captured.err)
    assert payload["error"] == "ScenarioError"
    assert payload["path"] == "$"


def test_missing_file(tmp_path, capsys):
    code = main(["limit", str(tmp_path / "nope.json")])
    assert code == 2
    assert error_payload(capsys.readouterr().err)["error"] == "ScenarioError"


def test_bad_thread_count(capsys):
    code = main(["simulate", str(SCENARIOS / "minimal.json"), "--threads", "0"])
    assert code == 2
    assert error_payload(capsys.readouterr().err)["path"] == "--threads"


def test_compare_size_guard(tmp_path, capsys):
    code = main(["compare", str(SCENARIOS / "continuous_gaussian.json"), "--out", str(tmp_path)])
    assert code == 2
    assert error_payload(capsys.readouterr().err)["error"] == "SizeGuardError"


def test_simulate_minimal_is_constant(tmp_path):
    assert main(["simulate", str(SCENARIOS / "minimal.json"), "--out", str(tmp_path), "--quiet"]) == 0
    values = pd.read_csv(tmp_path / "observable_identity.csv")
    assert values["value"].tolist() == [1.0] * 5
    rho = pd.read_csv(tmp_path / "reduced_density.csv")
    assert rho["re"].tolist() == [1.0] * 5
    assert not (tmp_path / "decoherence.csv").exists()


def test_simulate_writes_effect_density_histogram(tmp_path):
    code = main(["simulate", str(SCENARIOS / "smoothed_kicks.json"), "--out", str(tmp_path), "--quiet"])
    assert code == 0
    assert "effect_density.csv" in json.loads((tmp_path / "manifest.json").read_text())["files"]
    frame = pd.read_csv(tmp_path / "effect_density.csv")
    assert list(frame.columns) == ["m", "n", "left", "right", "re_w", "im_w"]
    assert set(zip(frame["m"], frame["n"])) == {(0, 1)}
    assert len(frame) == 50
    assert frame["re_w"].sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(frame["left"] < frame["right"])


def test_parametric_scenario_writes_no_histogram(tmp_path):
    assert main(["simulate", str(SCENARIOS / "two_level_kicks.json"), "--out", str(tmp_path), "--quiet"]) == 0
    assert not (tmp_path / "effect_density.csv").exists()
