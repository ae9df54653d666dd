"""CLI contracts: artifacts, report schema, config precedence, error records."""

import json

import numpy as np
import pytest

from radarood import cli, io as rio, metrics
from radarood.cli import main as cli_main


def last_json_line(capsys):
    out = capsys.readouterr().out.strip().splitlines()
    return json.loads(out[-1])


class TestGen:
    def test_manifest_and_files(self, tiny_pipeline):
        manifest = rio.load_manifest(tiny_pipeline["raw"])
        assert manifest["format"] == "raw-frames"
        assert len(manifest["scenes"]) == 3 * 4 + 3 * 2
        assert "config_hash" in manifest
        for entry in manifest["scenes"]:
            assert rio.scene_path(tiny_pipeline["raw"], entry).exists()

    def test_ood_only_in_test(self, tiny_pipeline):
        manifest = rio.load_manifest(tiny_pipeline["raw"])
        for entry in manifest["scenes"]:
            if not entry["is_id"]:
                assert entry["split"] == "test"


class TestPreprocess:
    def test_respd_window_arith(self, tiny_pipeline):
        on = rio.load_manifest(tiny_pipeline["rdi_on"])
        off = rio.load_manifest(tiny_pipeline["rdi_off"])
        assert on["preprocess"]["respd"] is True
        assert on["preprocess"]["window"] == 50
        assert off["preprocess"]["respd"] is False
        for e_on, e_off in zip(on["scenes"], off["scenes"]):
            assert e_off["n_frames"] == 70
            assert e_on["n_frames"] == 70 - 50 + 1

    def test_frames_normalized(self, tiny_pipeline):
        manifest = rio.load_manifest(tiny_pipeline["rdi_on"])
        data = rio.load_scene(tiny_pipeline["rdi_on"], manifest["scenes"][0])
        assert data.dtype == np.float32
        assert data.min() >= 0.0
        assert data.max() <= 1.0
        assert np.isclose(data.max(axis=(1, 2)), 1.0, atol=1e-6).all()

    def test_window_longer_than_scene_fails(self, tiny_pipeline, tmp_path, capsys):
        rc = cli_main(["preprocess", "--in", str(tiny_pipeline["raw"]),
                       "--out", str(tmp_path / "x"), "--respd", "on", "--window", "500"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "error" in err


class TestTrainAndCalibrate:
    def test_checkpoint_carries_provenance(self, tiny_pipeline):
        model, thresholds, meta = rio.load_checkpoint(tiny_pipeline["ckpt_cal"])
        assert thresholds is not None
        assert thresholds.target_tpr == 0.95
        assert meta["train_config"]["epochs"] == 2
        assert meta["dataset_preprocess"]["respd"] is True
        assert "config_hash" in meta
        assert model.epoch == 2
        assert len(model.loss_history) == 2

    def test_config_file_with_flag_override(self, tiny_pipeline, tmp_path, capsys):
        cfg_path = tmp_path / "train.json"
        rio.write_json(cfg_path, {"epochs": 1, "batch_size": 8, "steps_per_epoch": 2})
        out = tmp_path / "m.ckpt"
        rc = cli_main(["train", "--in", str(tiny_pipeline["rdi_on"]), "--out", str(out),
                       "--config", str(cfg_path), "--epochs", "2"])
        assert rc == 0
        model, _, meta = rio.load_checkpoint(out)
        assert model.epoch == 2            # flag wins over config file
        assert meta["train_config"]["batch_size"] == 8

    def test_unknown_config_key_rejected(self, tiny_pipeline, tmp_path, capsys):
        cfg_path = tmp_path / "bad.json"
        rio.write_json(cfg_path, {"epocks": 3})
        rc = cli_main(["train", "--in", str(tiny_pipeline["rdi_on"]),
                       "--out", str(tmp_path / "m.ckpt"), "--config", str(cfg_path)])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "epocks" in err["error"]["message"]

    def test_calibrate_requires_val_scenes(self, tmp_path, tiny_pipeline, capsys):
        rc = cli_main(["gen", "--out", str(tmp_path / "raw2"), "--scenes-per-id-class", "1",
                       "--scenes-per-ood-type", "1", "--frames-per-scene", "55", "--seed", "1"])
        assert rc == 0
        rc = cli_main(["preprocess", "--in", str(tmp_path / "raw2"),
                       "--out", str(tmp_path / "rdi2"), "--respd", "on", "--window", "50"])
        assert rc == 0
        rc = cli_main(["calibrate", "--ckpt", str(tiny_pipeline["ckpt"]),
                       "--in", str(tmp_path / "rdi2")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "val" in err["error"]["message"]


class TestEvalReport:
    def test_report_schema_and_ranges(self, tiny_pipeline, tmp_path, capsys):
        report_path = tmp_path / "report.json"
        rc = cli_main(["eval", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tiny_pipeline["rdi_on"]), "--out", str(report_path)])
        assert rc == 0
        report = rio.load_json(report_path)
        assert report == last_json_line(capsys)
        assert report["schema_version"] == 1
        assert report["kind"] == "eval-report"
        assert report["positive_class"] == "OOD"
        assert report["respd"] is True
        assert report["config_hash"]
        assert report["seed"] is not None
        for c in ("sit", "stand", "walk"):
            m = report["per_class"][c]
            for key in ("auroc_pct", "aupr_pct", "fpr95_pct", "fpr80_pct"):
                assert 0.0 <= m[key] <= 100.0
        assert report["verdicts"]["accuracy_pct"] <= 100.0
        assert report["runtime"]["frames_per_s"] > 0
        assert report["counts"]["ood_test"] > 0

    def test_perfect_separation_stub_scores(self, tiny_pipeline, tmp_path, monkeypatch, capsys):
        calls = {"n": 0}

        def stub_scores(model, images, batch=256):
            calls["n"] += 1
            n = len(images)
            ood_group = calls["n"] == 4  # groups arrive sit, stand, walk, then OOD
            value = 0.9 if ood_group else 0.01
            return {c: np.full(n, value) + np.arange(n) * 1e-6 for c in model.classes}

        monkeypatch.setattr(cli, "_score_batched", stub_scores)
        rc = cli_main(["eval", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tiny_pipeline["rdi_on"])])
        assert rc == 0
        report = last_json_line(capsys)
        for c in ("sit", "stand", "walk"):
            assert report["per_class"][c]["auroc_pct"] == pytest.approx(100.0)
            assert report["per_class"][c]["fpr95_pct"] == pytest.approx(0.0)

    def test_report_values_match_metric_oracles(self, tiny_pipeline, monkeypatch, capsys):
        rng = np.random.default_rng(8)
        fixed = {}

        def stub_scores(model, images, batch=256):
            key = len(fixed)
            fixed[key] = {c: np.round(rng.normal(0.3 + 0.1 * key, 0.1, len(images)), 3)
                          for c in model.classes}
            return fixed[key]

        monkeypatch.setattr(cli, "_score_batched", stub_scores)
        rc = cli_main(["eval", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tiny_pipeline["rdi_on"])])
        assert rc == 0
        report = last_json_line(capsys)
        class_order = ("sit", "stand", "walk")
        for k, c in enumerate(class_order):
            ids = fixed[k][c]
            oods = fixed[3][c]
            assert report["per_class"][c]["auroc_pct"] == pytest.approx(
                100 * metrics.auroc_bruteforce(ids, oods), abs=1e-9)
            assert report["per_class"][c]["aupr_pct"] == pytest.approx(
                100 * metrics.aupr_bruteforce(ids, oods), abs=1e-9)
            assert report["per_class"][c]["fpr95_pct"] == pytest.approx(
                100 * metrics.fpr_at_tpr_bruteforce(ids, oods, 0.95), abs=1e-9)
            assert report["per_class"][c]["fpr80_pct"] == pytest.approx(
                100 * metrics.fpr_at_tpr_bruteforce(ids, oods, 0.80), abs=1e-9)

    def test_missing_dataset_gives_error_record(self, tiny_pipeline, tmp_path, capsys):
        rc = cli_main(["eval", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tmp_path / "nope")])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"]["type"] == "DataError"


class TestDetect:
    def test_stream_summary_and_jsonl(self, tiny_pipeline, tmp_path, capsys):
        jsonl = tmp_path / "verdicts.jsonl"
        summary_path = tmp_path / "summary.json"
        rc = cli_main(["detect", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tiny_pipeline["raw"]), "--limit", "140",
                       "--out", str(jsonl), "--summary", str(summary_path)])
        assert rc == 0
        summary = rio.load_json(summary_path)
        assert summary == last_json_line(capsys)
        assert summary["frames_processed"] == 140
        assert summary["latency_ms"]["median"] is not None
        assert summary["verdicts"]["ID"] + summary["verdicts"]["OOD"] > 0
        lines = [json.loads(l) for l in jsonl.read_text().splitlines()]
        assert len(lines) == summary["verdicts"]["ID"] + summary["verdicts"]["OOD"]
        for line in lines[:5]:
            assert line["verdict"] in ("ID", "OOD")
            assert set(line["errors"]) == {"sit", "stand", "walk"}
            assert line["latency_ms"] > 0

    def test_framewise_mode_scores_every_frame(self, tiny_pipeline, capsys):
        rc = cli_main(["detect", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(tiny_pipeline["raw"]), "--limit", "30",
                       "--respd", "off"])
        assert rc == 0
        summary = last_json_line(capsys)
        assert summary["respd"] is False
        assert summary["verdicts"]["ID"] + summary["verdicts"]["OOD"] == 30

    def test_uncalibrated_checkpoint_rejected(self, tiny_pipeline, capsys):
        rc = cli_main(["detect", "--ckpt", str(tiny_pipeline["ckpt"]),
                       "--in", str(tiny_pipeline["raw"]), "--limit", "5"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "calibrate" in err["error"]["message"]

    def test_single_scene_file_input(self, tiny_pipeline, capsys):
        manifest = rio.load_manifest(tiny_pipeline["raw"])
        scene_file = rio.scene_path(tiny_pipeline["raw"], manifest["scenes"][0])
        rc = cli_main(["detect", "--ckpt", str(tiny_pipeline["ckpt_cal"]),
                       "--in", str(scene_file), "--limit", "60"])
        assert rc == 0
        assert last_json_line(capsys)["frames_processed"] == 60
