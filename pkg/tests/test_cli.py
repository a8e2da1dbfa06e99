"""End-to-end CLI runs at miniature scale: gen -> train -> eval -> report."""

import json
import os

import numpy as np
import pytest

from infocam.cli import main
from infocam.config import check_requirements, load_config
from infocam.report import read_records


@pytest.fixture()
def workdir(tmp_path, monkeypatch):
    monkeypatch.setenv("INFOCAM_DATA_ROOT", str(tmp_path))
    return tmp_path


def run_cli(*args):
    return main(list(args))


MIX_ARGS = [
    "--set", "task=mixture-mi", "--set", "name=mix-test",
    "--set", "seed=5", "--set", "dim=1", "--set", "balanced=true",
    "--set", "epochs=2", "--set", "batch_size=512",
    "--set", "arch=dense:16,relu,dense:16,relu,dense:5",
]


class TestMixturePipeline:
    def test_gen_train_eval_cycle(self, workdir):
        assert run_cli("gen", *MIX_ARGS) == 0
        data_dir = workdir / "runs" / "mix-test" / "data"
        manifest = json.loads((data_dir / "manifest.json").read_text())
        assert manifest["counts"] == [12000] * 5
        assert set(manifest["files"]) == {"train", "valid", "test"}

        assert run_cli("train", *MIX_ARGS) == 0
        assert (workdir / "runs" / "mix-test" / "checkpoint.npz").exists()

        assert run_cli("eval-mi", *MIX_ARGS) == 0
        assert run_cli("eval-cls", *MIX_ARGS) == 0
        records = read_records(workdir / "runs" / "mix-test" / "records.jsonl")
        metrics = {}
        for record in records:
            metrics.update(record.metrics)
        assert "test/mi_mc" in metrics
        assert "test/mi_softmax" in metrics
        assert "test/mi_pc_softmax" in metrics
        assert "test/accuracy" in metrics
        # dim-1 balanced mixture: sane ranges even at 2 epochs
        assert 0.6 < metrics["test/accuracy"] < 0.8
        assert 0.9 < metrics["test/mi_mc"] < 1.15

    def test_gen_manifest_checksum_stability(self, workdir):
        run_cli("gen", *MIX_ARGS)
        manifest_path = (workdir / "runs" / "mix-test" / "data"
                         / "manifest.json")
        first = manifest_path.read_text()
        run_cli("gen", *MIX_ARGS)
        assert manifest_path.read_text() == first
        run_cli("gen", *MIX_ARGS[:-4], "--set", "seed=6",
                "--set", "arch=dense:16,relu,dense:16,relu,dense:5")
        second = json.loads(manifest_path.read_text())
        assert second["files"]["train"]["sha256"] != \
            json.loads(first)["files"]["train"]["sha256"]

    def test_train_before_gen_fails(self, workdir):
        with pytest.raises(FileNotFoundError, match="infocam gen"):
            run_cli("train", "--set", "task=mixture-mi",
                    "--set", "name=nodata", "--set", "seed=1")

    def test_shuffled_label_control_near_zero_mi(self, workdir):
        args = [a.replace("mix-test", "mix-ctrl") for a in MIX_ARGS]
        args += ["--set", "shuffle_labels=true", "--set", "epochs=3",
                 "--set", "arch=dense:8,relu,dense:8,relu,dense:5"]
        run_cli("gen", *args)
        run_cli("train", *args)
        run_cli("eval-mi", *args)
        records = read_records(workdir / "runs" / "mix-ctrl"
                               / "records.jsonl")
        metrics = {}
        for record in records:
            metrics.update(record.metrics)
        assert abs(metrics["test/mi_softmax"]) <= \
            3 * metrics["test/mi_softmax_stderr"]

    def test_requirement_gate_exit_code(self, workdir):
        run_cli("gen", *MIX_ARGS)
        run_cli("train", *MIX_ARGS)
        ok = run_cli("eval-cls", *MIX_ARGS,
                     "--set", "require_test/accuracy_min=0.5")
        assert ok == 0
        bad = run_cli("eval-cls", *MIX_ARGS,
                      "--set", "require_test/accuracy_min=0.99")
        assert bad == 1


WSOL_ARGS = [
    "--set", "task=multi-mnist-wsol", "--set", "name=wsol-test",
    "--set", "seed=3", "--set", "n_images=160", "--set", "epochs=1",
    "--set", "batch_size=64", "--set", "head=sigmoid",
    "--set", "map_kinds=cam,infocam", "--set", "overlays=2",
]


class TestWsolPipeline:
    def test_gen_train_localize(self, workdir):
        assert run_cli("gen", *WSOL_ARGS) == 0
        data_dir = workdir / "runs" / "wsol-test" / "data"
        assert (data_dir / "train.imgd").exists()
        assert list(data_dir.glob("sample_*.pgm"))

        assert run_cli("train", *WSOL_ARGS) == 0
        assert run_cli("eval-cls", *WSOL_ARGS) == 0
        assert run_cli("localize", *WSOL_ARGS) == 0

        run_dir = workdir / "runs" / "wsol-test"
        records = read_records(run_dir / "records.jsonl")
        metrics = {}
        for record in records:
            metrics.update(record.metrics)
        assert "test/cam_gt_loc" in metrics
        assert "test/infocam_gt_loc" in metrics
        assert "test/digit0_accuracy" in metrics
        # per-image localization records, one line per (image, digit)
        cam_lines = (run_dir / "localize_cam.jsonl").read_text().splitlines()
        assert len(cam_lines) == metrics["test/cam_n_objects"]
        parsed = json.loads(cam_lines[0])
        assert {"image", "label", "gt_box", "pred_box", "iou",
                "gt_loc", "top1_loc"} <= set(parsed)
        assert list(run_dir.glob("overlay_cam_*.png"))
        assert list(run_dir.glob("overlay_cam_*.pgm"))

    def test_localize_requires_gap_head(self, workdir):
        args = [a.replace("wsol-test", "wsol-flat") for a in WSOL_ARGS]
        args += ["--set",
                 "arch=conv:4x3,relu,pool:2,flatten,dense:16,relu,dense:10"]
        run_cli("gen", *args)
        run_cli("train", *args)
        with pytest.raises(ValueError, match="GAP"):
            run_cli("localize", *args)


CLS_ARGS = [
    "--set", "task=mnist-cls", "--set", "name=cls-test",
    "--set", "seed=9", "--set", "balanced=false", "--set", "epochs=1",
    "--set", "batch_size=128",
    "--set", "arch=conv:4x3,relu,pool:2,flatten,dense:16,relu,dense:10",
]


class TestMnistClsPipeline:
    def test_unbalanced_classification_cycle(self, workdir):
        assert run_cli("gen", *CLS_ARGS) == 0
        manifest = json.loads(
            (workdir / "runs" / "cls-test" / "data" / "manifest.json")
            .read_text())
        assert manifest["task"] == "mnist-cls"
        assert run_cli("train", *CLS_ARGS) == 0
        assert run_cli("eval-cls", *CLS_ARGS) == 0
        records = read_records(
            workdir / "runs" / "cls-test" / "records.jsonl")
        metrics = {}
        for record in records:
            metrics.update(record.metrics)
        assert 0.0 <= metrics["test/accuracy"] <= 1.0
        assert 0.0 <= metrics["test/per_class_accuracy"] <= 1.0

    def test_unbalanced_gen_reduces_minority_counts(self, workdir):
        run_cli("gen", *CLS_ARGS)
        from infocam.data import load_image_dataset
        data_dir = workdir / "runs" / "cls-test" / "data"
        total = 0
        counts = np.zeros(10, dtype=int)
        for split in ("train", "valid", "test"):
            ds = load_image_dataset(data_dir / f"{split}.imgd")
            counts += np.bincount(ds.labels, minlength=10)
            total += len(ds)
        # minority digits keep ~10% of their instances
        assert counts[0] < 0.25 * counts[1]
        assert counts[4] < 0.25 * counts[3]


class TestReportCommand:
    def test_consolidated_report_with_figures(self, workdir, capsys):
        run_cli("gen", *MIX_ARGS)
        run_cli("train", *MIX_ARGS)
        run_cli("eval-mi", *MIX_ARGS)
        run_cli("eval-cls", *MIX_ARGS)
        records_path = workdir / "runs" / "mix-test" / "records.jsonl"
        out_dir = workdir / "report"
        assert run_cli("report", str(records_path), "--out",
                       str(out_dir)) == 0
        assert (out_dir / "report.txt").exists()
        tsv = (out_dir / "report.tsv").read_text().splitlines()
        assert tsv[0].startswith("name\ttask\tdigest")
        assert len(tsv) == 2
        assert (out_dir / "mi_estimates.png").exists()
        assert (out_dir / "classification_accuracy.png").exists()

    def test_conflicting_digests_rejected(self, workdir, tmp_path):
        run_cli("gen", *MIX_ARGS)
        run_cli("train", *MIX_ARGS)
        run_cli("eval-cls", *MIX_ARGS)
        # same name, different config -> digest conflict on merge
        other = [a.replace("dim=1", "dim=2") for a in MIX_ARGS]
        run_cli("gen", *other)
        run_cli("train", *other)
        run_cli("eval-cls", *other)
        records_path = workdir / "runs" / "mix-test" / "records.jsonl"
        with pytest.raises(ValueError, match="conflicting config digests"):
            run_cli("report", str(records_path), "--out",
                    str(tmp_path / "rep"))


class TestConfigParsing:
    def test_file_plus_override_precedence(self, tmp_path):
        cfg_file = tmp_path / "exp.cfg"
        cfg_file.write_text(
            "task = mixture-mi\nseed = 9\ndim = 5\n# comment\nlr = 0.01\n")
        cfg = load_config(cfg_file, ["dim=7"])
        assert cfg.dim == 7          # override wins
        assert cfg.seed == 9
        assert cfg.lr == 0.01

    def test_unknown_key_rejected(self, tmp_path):
        cfg_file = tmp_path / "bad.cfg"
        cfg_file.write_text("tsak = mixture-mi\n")
        with pytest.raises(ValueError, match="unknown config key"):
            load_config(cfg_file)

    def test_seed_mandatory(self):
        cfg = load_config(None, ["task=mixture-mi"])
        with pytest.raises(ValueError, match="seed"):
            cfg.validate()

    def test_digest_ignores_seed(self):
        a = load_config(None, ["task=mixture-mi", "seed=1"])
        b = load_config(None, ["task=mixture-mi", "seed=2"])
        c = load_config(None, ["task=mixture-mi", "seed=1", "dim=3"])
        assert a.digest() == b.digest()
        assert a.digest() != c.digest()

    def test_requirements_parsing(self):
        cfg = load_config(None, ["task=mixture-mi", "seed=1",
                                 "require_test/accuracy_min=0.9",
                                 "require_test/loss_max=0.5"])
        failures = check_requirements(
            cfg, {"test/accuracy": 0.95, "test/loss": 0.4})
        assert failures == []
        failures = check_requirements(
            cfg, {"test/accuracy": 0.85, "test/loss": 0.6})
        assert len(failures) == 2
