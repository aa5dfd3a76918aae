from __future__ import annotations

import csv
import json
import subprocess
import sys

import pytest

from gpplane import cli
from gpplane.evalrank import read_summary_csv

TINY = json.dumps({"epochs": 1, "per_volume": 8})


def run(*argv) -> int:
    return cli.run_command([str(a) for a in argv])


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("phantom", "--count", 20, "--seed", 7, "--out", d) == 0
    return d


def test_phantom_writes_pairs_and_truth(data):
    assert len(list(data.glob("*.raw"))) == 20
    assert len(list(data.glob("ph7-*.json"))) == 20
    with open(data / "truth.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 20
    manifest = json.loads((data / "manifest.json").read_text())
    assert manifest["seeds"] == {"master_seed": 7}
    assert len(manifest["outputs"]) == 41


def test_pipeline_and_rerun_is_byte_identical(data, tmp_path):
    model, preds, out = tmp_path / "m.gpm", tmp_path / "preds.csv", tmp_path / "eval"
    argv = [
        ("train", "--method", "axial-close", "--input", data, "--out", model, "--seed", 3, "--params", TINY),
        ("detect", "--method", "axial-close", "--model", model, "--input", data, "--out", preds),
        ("eval", "--pred", preds, "--truth", data / "truth.csv", "--out", out),
        ("rank", "--summary", out / "summary.csv", "--out", tmp_path / "board.txt"),
    ]
    manifests = [f"{model}.manifest.json", f"{preds}.manifest.json", out / "manifest.json", tmp_path / "board.txt.manifest.json"]
    first = []
    for args, man in zip(argv, manifests):
        assert run(*args) == 0
        first.append(open(man, "rb").read())
    with open(out / "report.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 20
    rows = preds.read_text().splitlines()
    assert rows[0] == "volume_id,gppi_pred,method,model_id"
    assert rows[1:] == sorted(rows[1:])
    for args, man, before in zip(argv, manifests, first):
        assert run(*args) == 0
        assert open(man, "rb").read() == before


def test_ensemble_train_and_detect(data, tmp_path):
    model, preds = tmp_path / "e.gpm", tmp_path / "e.csv"
    assert run("train", "--method", "ensemble", "--base", "axial-close", "--folds", 3, "--input", data, "--out", model, "--params", TINY) == 0
    assert run("detect", "--method", "axial-close", "--model", model, "--input", data, "--out", preds) == 1
    assert run("detect", "--method", "ensemble", "--model", model, "--input", data, "--out", preds) == 0
    assert preds.read_text().splitlines()[1].split(",")[2] == "ensemble:axial-close"
    assert run("train", "--method", "ensemble", "--input", data, "--out", model) == 1


def test_prep_clips_and_crops(data, tmp_path):
    out = tmp_path / "prepped"
    assert run("prep", "--input", data, "--out", out, "--clip", 0, 1900, "--crop", 64, 64) == 0
    from gpplane.volgrid import load_annotation, load_volume

    stem = out / "ph7-0000"
    v = load_volume(stem)
    assert v.dims == (64, 64, 192) and v.voxels.min() >= 0 and v.voxels.max() <= 1900
    assert load_annotation(stem).gppi == load_annotation(data / "ph7-0000").gppi
    assert (out / "truth.csv").read_bytes() == (data / "truth.csv").read_bytes()


def test_eval_table4_fixture(data_dir, tmp_path):
    assert run("eval", "--pred", data_dir / "table4_predictions.csv", "--truth", data_dir / "table4_truth.csv", "--out", tmp_path) == 0
    rows = {r.method: r for r in read_summary_csv(tmp_path / "summary.csv")}
    assert rows["SN"].sum_score == pytest.approx(9.068, abs=0.002)
    assert rows["EK"].mean_score == pytest.approx(0.337, abs=0.002)
    board = (tmp_path / "leaderboard.txt").read_text().splitlines()
    assert [line.split()[1] for line in board[1:]] == ["SN", "BM", "MH", "CW", "SV", "EK"]


def test_config_file_overrides_and_rejects_unknown(data, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"count": 2, "out": str(tmp_path / "p")}))
    assert run("phantom", "--config", cfg) == 0
    assert len(list((tmp_path / "p").glob("*.raw"))) == 2
    cfg.write_text(json.dumps({"cuont": 2}))
    assert run("phantom", "--config", cfg, "--out", tmp_path / "q") == 1
    cfg.write_text("[1, 2]")
    assert run("phantom", "--config", cfg, "--out", tmp_path / "q") == 1
    cfg.write_text(json.dumps({"params": {"epochs": 1, "bogus": 1}}))
    assert run("train", "--method", "axial-close", "--input", data, "--out", tmp_path / "m.gpm", "--config", cfg) == 1


def test_env_data_dir(monkeypatch, tmp_path):
    monkeypatch.setenv(cli.DATA_DIR_ENV, str(tmp_path / "envdata"))
    assert run("phantom", "--count", 1) == 0
    assert (tmp_path / "envdata" / "truth.csv").exists()


@pytest.mark.parametrize(
    "argv",
    [
        ["fly"],
        ["phantom", "--bogus"],
        ["phantom", "--count", "1"],  # no --out and no env var
        ["detect", "--method", "window-bm", "--model", "missing.gpm", "--input", ".", "--out", "p.csv"],
        ["eval", "--pred", "missing.csv", "--truth", "missing.csv"],
        ["rank", "--summary", "missing.csv", "--out", "x.txt"],
    ],
)
def test_input_errors_exit_1(argv, monkeypatch, tmp_path):
    monkeypatch.delenv(cli.DATA_DIR_ENV, raising=False)
    monkeypatch.chdir(tmp_path)
    assert cli.run_command(argv) == 1


def test_model_method_mismatch(data, tmp_path):
    model = tmp_path / "m.gpm"
    assert run("train", "--method", "axial-close", "--input", data, "--out", model, "--params", TINY) == 0
    assert run("detect", "--method", "window-bm", "--model", model, "--input", data, "--out", tmp_path / "p.csv") == 1


def test_internal_failure_exit_2(monkeypatch, tmp_path):
    def boom(*a, **k):
        raise RuntimeError("broken")

    monkeypatch.setattr(cli, "generate_dataset", boom)
    assert run("phantom", "--count", 1, "--out", tmp_path) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "gpplane", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("gpplane ")
