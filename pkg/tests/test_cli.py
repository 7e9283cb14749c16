"""CLI: manifests, artifacts, grids, replay determinism, error paths."""

import json
import os
import subprocess
import sys

import numpy as np
import pytest

from orthoview.cli import main
from orthoview.projection import read_pgm16

TINY_GEN = ["--train", "3", "--test", "2", "--points", "48", "--seeds", "0"]
TINY_MODEL_FLAGS = ["--resolution", "16", "--views", "1"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen", "--out", str(root)] + TINY_GEN) == 0
    return root


def read_csv_rows(path):
    lines = path.read_text().strip().split("\n")
    header = lines[0].split(",")
    return [dict(zip(header, line.split(","))) for line in lines[1:]]


class TestGenRender:
    def test_gen_layout(self, dataset):
        assert (dataset / "manifest.json").exists()
        assert (dataset / "train" / "classes.txt").exists()
        assert len(list((dataset / "train" / "sphere").glob("*.xyz"))) == 3
        assert len(list((dataset / "test" / "torus").glob("*.xyz"))) == 2

    def test_render_single_centered_point(self, tmp_path):
        xyz = tmp_path / "point.xyz"
        xyz.write_text("0 0 0\n")
        out = tmp_path / "render"
        assert main(["render", "--xyz", str(xyz), "--out", str(out), "--resolution", "16"]) == 0
        pgms = sorted(out.glob("point_view*.pgm"))
        assert len(pgms) == 6
        for p in pgms:
            img = read_pgm16(p)
            assert (img > 0).sum() == 1

    def test_render_from_dataset(self, dataset, tmp_path):
        out = tmp_path / "render"
        code = main(["render", "--data", str(dataset / "test"), "--out", str(out),
                     "--limit", "2", "--views", "3", "--resolution", "16"])
        assert code == 0
        assert len(list(out.glob("*.pgm"))) == 6  # 2 clouds x 3 views

    def test_gen_deterministic(self, tmp_path, dataset):
        again = tmp_path / "again"
        assert main(["gen", "--out", str(again)] + TINY_GEN) == 0
        a = (dataset / "train" / "box" / "0001.xyz").read_text()
        b = (again / "train" / "box" / "0001.xyz").read_text()
        assert a == b


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(
        ["train", "--data", str(dataset), "--out", str(out), "--arch", "pointnet",
         "--protocol", "simpleview", "--epochs", "2", "--points", "32",
         "--batch-size", "4", "--seeds", "0"]
    )
    assert code == 0
    return out


class TestTrainEval:
    def test_artifacts(self, trained):
        for name in ("manifest.json", "model.ovck", "log.json", "metrics.json", "report.csv", "confusion.csv"):
            assert (trained / name).exists(), name

    def test_eval_matches_training_log(self, dataset, trained, tmp_path):
        out = tmp_path / "eval"
        code = main(["eval", "--checkpoint", str(trained / "model.ovck"), "--data", str(dataset),
                     "--out", str(out), "--points", "32", "--seeds", "0"])
        assert code == 0
        logged = json.loads((trained / "metrics.json").read_text())
        fresh = json.loads((out / "metrics.json").read_text())
        assert fresh["overall_acc"] == logged["overall_acc"]
        assert fresh["confusion"] == logged["confusion"]

    def test_manifest_replay_reproduces(self, trained, tmp_path):
        out2 = tmp_path / "replay"
        code = main(["train", "--config", str(trained / "manifest.json"), "--out", str(out2)])
        assert code == 0
        a = json.loads((trained / "log.json").read_text())
        b = json.loads((out2 / "log.json").read_text())
        assert a == b
        assert (trained / "model.ovck").read_bytes() == (out2 / "model.ovck").read_bytes()

    def test_multiple_seeds_rejected_for_train(self, dataset, tmp_path):
        code = main(["train", "--data", str(dataset), "--out", str(tmp_path / "x"),
                     "--seeds", "0,1"])
        assert code == 2


class TestGrids:
    def test_ablate_cardinality(self, dataset, tmp_path):
        out = tmp_path / "ablate"
        code = main(["ablate", "--data", str(dataset), "--out", str(out), "--seeds", "0",
                     "--epochs", "1", "--points", "16", "--batch-size", "4",
                     "--resolution", "16"])
        assert code == 0
        rows = read_csv_rows(out / "report.csv")
        assert len(rows) == 24
        labels = {r["protocol"] for r in rows}
        assert len(labels) == 24
        assert "v6-persp-concat-wavg" in labels

    def test_compare_grid_and_fractions(self, dataset, tmp_path):
        out = tmp_path / "compare"
        code = main(["compare", "--data", str(dataset), "--out", str(out), "--seeds", "0",
                     "--epochs", "1", "--points", "16", "--batch-size", "4",
                     "--archs", "pointnet", "--fractions", "0.5,1.0"])
        assert code == 0
        rows = read_csv_rows(out / "report.csv")
        # 4 loss/selection cells x 2 fractions x 1 arch x 1 seed
        assert len(rows) == 8
        fractions = {r["fraction"] for r in rows}
        assert fractions == {"0.5", "1.0"}

    def test_jobs_pool_matches_sequential(self, dataset, tmp_path):
        seq = tmp_path / "seq"
        par = tmp_path / "par"
        args = ["--data", str(dataset), "--seeds", "0", "--epochs", "1", "--points", "16",
                "--batch-size", "4", "--archs", "pointnet", "--fractions", "1.0"]
        assert main(["compare", "--out", str(seq), "--jobs", "1"] + args) == 0
        assert main(["compare", "--out", str(par), "--jobs", "2"] + args) == 0
        assert (seq / "report.csv").read_text() == (par / "report.csv").read_text()

    def test_compare_presets_mode(self, dataset, tmp_path):
        out = tmp_path / "presets"
        code = main(["compare", "--data", str(dataset), "--out", str(out), "--seeds", "0",
                     "--epochs", "1", "--points", "16", "--batch-size", "4",
                     "--archs", "pointnet", "--protocols", "dgcnn,simpleview"])
        assert code == 0
        rows = read_csv_rows(out / "report.csv")
        assert {r["protocol"] for r in rows} == {"dgcnn", "simpleview"}


class TestErrors:
    def test_missing_dataset(self, tmp_path, capsys):
        code = main(["train", "--data", str(tmp_path / "nope"), "--out", str(tmp_path / "o"), "--seeds", "0"])
        assert code == 2
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip()

    def test_checkpoint_mismatch(self, dataset, tmp_path, capsys):
        code = main(["eval", "--checkpoint", str(tmp_path / "missing.ovck"),
                     "--data", str(dataset), "--out", str(tmp_path / "e")])
        assert code == 2

    def test_env_seed_used(self, dataset, tmp_path, monkeypatch):
        monkeypatch.setenv("ORTHOVIEW_SEED", "7")
        out = tmp_path / "envseed"
        code = main(["train", "--data", str(dataset), "--out", str(out), "--arch", "pointnet",
                     "--epochs", "1", "--points", "16", "--batch-size", "4"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seeds"] == [7]
