import json
import shutil

import numpy as np
import pytest

from manirecon import pipeline as pl
from manirecon.cli import main
from manirecon.data import DataBundle
from manirecon.errors import InputError

SMALL = {
    "manifold": {"kind": "flat_torus", "basis": [[0.33, 0.0], [0.0, 0.33]]},
    "bounds": {"lambda": 12.0, "R": 0.1, "n": 2},
    "params": {"eps1": 0.01, "eps0": 0.01},
    "mode": "distance_data",
    "seed": 0,
    "ball_center": [0.165, 0.165],
    "nodes": {"count": 6},
    "evaluate": {"max_error": 0.1},
    "output": "out",
}

HEAT = {
    "manifold": {"kind": "flat_torus", "basis": [[1.0, 0.0], [0.0, 1.0]]},
    "bounds": {"lambda": 4.0, "R": 0.3, "n": 2},
    "params": {"eps1": 0.07, "eps0": 0.07},
    "mode": "heat_kernel_case_ii",
    "seed": 0,
    "ball_center": [0.5, 0.5],
    "heat": {"times": [1e-5, 3e-5, 1e-4], "sigma": 1e-4, "y_epsilon": 0.1, "z_epsilon": 0.1},
    "nodes": {"count": 4},
    "output": "out",
}


def write_config(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return path


def test_missing_landmark_distances_names_the_field(tmp_path, capsys):
    doc = dict(HEAT, mode="heat_kernel_case_i")
    path = write_config(tmp_path, doc)
    assert main(["run", "--config", str(path)]) == 2
    err = capsys.readouterr().err
    assert "heat.landmark_distances" in err


@pytest.mark.parametrize("bad", [
    {"mode": "bogus"},
    {"params": {}},
    {"seed": -1},
    {"unknown_field": 1},
    {"heat": {"times": [1e-3]}, "mode": "heat_kernel_case_ii"},
])
def test_config_validation(tmp_path, bad):
    doc = {**SMALL, **bad}
    with pytest.raises(InputError):
        pl.load_config(write_config(tmp_path, doc))


def test_cli_input_errors_exit_with_code_two(tmp_path, capsys):
    assert main(["run"]) == 2
    assert main(["run", "--config", str(tmp_path / "nope.json")]) == 2
    path = write_config(tmp_path, SMALL)
    assert main(["run", "--config", str(path), "--threads", "0"]) == 2
    assert main(["report", "--out", str(tmp_path / "empty")]) == 2
    assert "error (input)" in capsys.readouterr().err


@pytest.mark.parametrize("values", [[], [0.01, 0.02], [0.01, 0.01]])
def test_sweep_rejects_bad_axis_values(tmp_path, values):
    doc = {**SMALL, "sweep": {"axis": "eps1", "values": values}}
    cfg = pl.load_config(write_config(tmp_path, doc))
    with pytest.raises(InputError):
        pl.sweep(cfg)


def test_sweep_rejects_unknown_axis(tmp_path):
    doc = {**SMALL, "sweep": {"axis": "t", "values": [1.0]}}
    with pytest.raises(InputError):
        pl.sweep(pl.load_config(write_config(tmp_path, doc)))


def test_stage_by_stage_matches_single_run(tmp_path):
    path = write_config(tmp_path, SMALL)
    staged, whole = tmp_path / "staged", tmp_path / "whole"
    for cmd in ("synth", "recon-local", "recon-global", "evaluate"):
        assert main([cmd, "--config", str(path), "--out", str(staged)]) == 0
    assert main(["run", "--config", str(path), "--out", str(whole)]) == 0
    for name in (pl.BUNDLE, pl.MATRIX, pl.MATRIX_SIDECAR, pl.EVALUATION):
        assert (staged / name).read_bytes() == (whole / name).read_bytes(), name


def test_run_report_accounts_for_every_flag(tmp_path, capsys):
    path = write_config(tmp_path, SMALL)
    out = tmp_path / "o"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    doc = json.loads((out / pl.RUN).read_text())
    assert doc["status"] == "ok"
    assert [s["name"] for s in doc["stages"]] == ["synth", "recon-local", "recon-global", "evaluate"]
    assert sum(s["flags"] for s in doc["stages"]) == len(doc["flags"])
    assert "ledger" in doc["constants"]
    for name in doc["artifacts"]:
        assert (out / name).exists()
    capsys.readouterr()
    assert main(["report", "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "run status: ok" in text
    assert (out / "report.csv").read_text().startswith("stage,status,seconds,flags\n")


def test_seed_changes_the_bundle(tmp_path):
    path = write_config(tmp_path, SMALL)
    assert main(["synth", "--config", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["synth", "--config", str(path), "--out", str(tmp_path / "b"), "--seed", "3"]) == 0
    a = (tmp_path / "a" / pl.BUNDLE).read_bytes()
    b = (tmp_path / "b" / pl.BUNDLE).read_bytes()
    assert a != b


def test_bundle_without_provenance_skips_evaluation(tmp_path):
    path = write_config(tmp_path, SMALL)
    first = tmp_path / "first"
    assert main(["synth", "--config", str(path), "--out", str(first)]) == 0
    bundle = DataBundle.from_json((first / pl.BUNDLE).read_text())
    (tmp_path / "bare.json").write_text(bundle.stripped().to_json())
    doc = {k: v for k, v in SMALL.items() if k not in ("manifold", "bounds")}
    doc["bundle_file"] = "bare.json"
    cfg_path = write_config(tmp_path, doc, "bare_cfg.json")
    out = tmp_path / "bare_run"
    assert main(["run", "--config", str(cfg_path), "--out", str(out)]) == 0
    ev = json.loads((out / pl.EVALUATION).read_text())
    assert ev["status"] == "skipped"
    # the reconstruction itself does not depend on the hidden truth
    with_truth = tmp_path / "truth_run"
    assert main(["run", "--config", str(path), "--out", str(with_truth)]) == 0
    assert (out / pl.MATRIX).read_bytes() == (with_truth / pl.MATRIX).read_bytes()


def test_heat_mode_runs_end_to_end(tmp_path):
    path = write_config(tmp_path, HEAT)
    out = tmp_path / "heat"
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    sel = json.loads((out / pl.T_SELECTION).read_text())
    assert sel["t_star"] <= 1e-4
    bundle = DataBundle.from_json((out / pl.BUNDLE).read_text())
    assert bundle.params.eps1 == pytest.approx(7 * np.sqrt(1e-4))


def test_case_i_with_synthetic_landmark_distances(tmp_path):
    doc = json.loads(json.dumps(HEAT))
    doc["mode"] = "heat_kernel_case_i"
    doc["heat"]["landmark_distances"] = {"h": 0.01, "seed": 1}
    path = write_config(tmp_path, doc)
    out = tmp_path / "case_i"
    assert main(["synth", "--config", str(path), "--out", str(out)]) == 0
    assert main(["heat2dist", "--config", str(path), "--out", str(out)]) == 0
    bundle = DataBundle.from_json((out / pl.BUNDLE).read_text())
    assert bundle.n_vectors > bundle.n_landmarks


def test_config_paths_are_relative_to_the_config(tmp_path):
    sub = tmp_path / "configs"
    sub.mkdir()
    cfg = pl.load_config(write_config(sub, SMALL))
    assert cfg.output == sub / "out"


def test_shipped_config_loads():
    cfg = pl.load_config("configs/torus_minimal.json")
    assert cfg.sweep["axis"] == "eps1"
    assert cfg.reconstruction_params().eps1 == 0.01
