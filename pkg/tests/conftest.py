"""Shared fixtures: a tiny synthetic dataset pipeline built once per session."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from radarood.cli import main as cli_main


@pytest.fixture(scope="session")
def tiny_pipeline(tmp_path_factory):
    """Small but complete artifact chain: raw -> rdi (on/off) -> trained+calibrated ckpt."""
    root = tmp_path_factory.mktemp("tiny")
    raw = root / "raw"
    rdi_on = root / "rdi_on"
    rdi_off = root / "rdi_off"
    ckpt = root / "model.ckpt"
    ckpt_cal = root / "model_cal.ckpt"

    assert cli_main([
        "gen", "--out", str(raw), "--scenes-per-id-class", "4",
        "--scenes-per-ood-type", "2", "--frames-per-scene", "70", "--seed", "3",
    ]) == 0
    assert cli_main([
        "preprocess", "--in", str(raw), "--out", str(rdi_on), "--respd", "on",
        "--window", "50",
    ]) == 0
    assert cli_main([
        "preprocess", "--in", str(raw), "--out", str(rdi_off), "--respd", "off",
    ]) == 0
    assert cli_main([
        "train", "--in", str(rdi_on), "--out", str(ckpt), "--epochs", "2",
        "--batch-size", "8", "--steps-per-epoch", "4", "--seed", "11",
    ]) == 0
    assert cli_main([
        "calibrate", "--ckpt", str(ckpt), "--in", str(rdi_on), "--out", str(ckpt_cal),
        "--tpr", "0.95",
    ]) == 0
    return {
        "root": root, "raw": raw, "rdi_on": rdi_on, "rdi_off": rdi_off,
        "ckpt": ckpt, "ckpt_cal": ckpt_cal,
    }
