"""Command-line pipeline: gen, preprocess, train, calibrate, eval, detect.

Every command takes a JSON config file (--config) whose keys match its flags;
explicit flags override the file.  Commands exit 0 on success and 2 on expected
failures, emitting a machine-readable error record on stderr.  Reports embed
the effective config hash and seeds so runs can be reproduced.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io as rio
from .detector import VERDICT_ID, VERDICT_OOD, Thresholds, calibrate, classify
from .dsp import MtiState, RadarConfig, RawFrameCube, make_rdi
from .errors import PipelineError
from .metrics import aupr, auroc, fpr_at_tpr
from .model import ModelConfig, MultiDecoderModel
from .respd import (
    FrameWindowConfig,
    RdiSequence,
    StreamingWindowSum,
    normalize_unit_frames,
    respd_transform,
)
from .synth import ID_SCENARIOS, build_dataset, default_recipe, radar_config_from_manifest
from .train import TrainConfig, train

SCHEMA_VERSION = 1


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _merge_config(defaults: dict, config_path: str | None, overrides: dict) -> dict:
    merged = dict(defaults)
    if config_path:
        file_cfg = rio.load_json(config_path)
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ValueError(f"unknown config keys in {config_path}: {sorted(unknown)}")
        merged.update(file_cfg)
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


def _respd_flag(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("--respd must be 'on' or 'off'")
    return value == "on"


# -- gen -----------------------------------------------------------------------

GEN_DEFAULTS = {
    "scenes_per_id_class": 30,
    "scenes_per_ood_type": 10,
    "frames_per_scene": 400,
    "noise_snr": 20.0,
    "seed": 7,
    "split": [0.7, 0.15, 0.15],
}


def cmd_gen(args) -> int:
    cfg = _merge_config(GEN_DEFAULTS, args.config, {
        "seed": args.seed,
        "scenes_per_id_class": args.scenes_per_id_class,
        "scenes_per_ood_type": args.scenes_per_ood_type,
        "frames_per_scene": args.frames_per_scene,
        "noise_snr": args.snr,
    })
    radar = RadarConfig()
    specs = default_recipe(
        scenes_per_id_class=cfg["scenes_per_id_class"],
        scenes_per_ood_type=cfg["scenes_per_ood_type"],
        frames_per_scene=cfg["frames_per_scene"],
        noise_snr=cfg["noise_snr"],
        seed=cfg["seed"],
    )
    t0 = time.perf_counter()
    manifest = build_dataset(specs, radar, tuple(cfg["split"]), args.out, log=_log)
    manifest["gen_config"] = cfg
    manifest["config_hash"] = rio.config_hash(cfg)
    rio.write_manifest(args.out, manifest)
    n_frames = sum(s["n_frames"] for s in manifest["scenes"])
    _log(f"generated {len(manifest['scenes'])} scenes / {n_frames} frames "
         f"in {time.perf_counter() - t0:.1f}s -> {args.out}")
    print(json.dumps({"scenes": len(manifest["scenes"]), "frames": n_frames,
                      "config_hash": manifest["config_hash"]}))
    return 0


# -- preprocess ------------------------------------------------------------------

PREPROCESS_DEFAULTS = {
    "respd": True,
    "window": 50,
    "stride": 1,
}


def cmd_preprocess(args) -> int:
    cfg = _merge_config(PREPROCESS_DEFAULTS, args.config, {
        "respd": args.respd,
        "window": args.window,
        "stride": args.stride,
    })
    manifest = rio.load_manifest(args.input)
    radar = radar_config_from_manifest(manifest)
    window_cfg = FrameWindowConfig(window_size=cfg["window"], stride=cfg["stride"])
    out_dir = Path(args.out)
    t0 = time.perf_counter()
    total_in = 0
    scenes_out = []
    for entry in manifest["scenes"]:
        raw = rio.load_scene(args.input, entry, mmap=True)
        state = MtiState()
        rdis = np.empty((len(raw), radar.n_doppler_bins, radar.n_range_bins))
        for k in range(len(raw)):
            frame = RawFrameCube(data=np.asarray(raw[k], dtype=np.float64), frame_index=k)
            rdi, state = make_rdi(frame, state, radar)
            rdis[k] = rdi.data
        total_in += len(raw)
        if cfg["respd"]:
            seq = respd_transform(
                RdiSequence(frames=rdis, frame_indices=np.arange(len(rdis))), window_cfg)
            frames, indices = seq.frames, seq.frame_indices
        else:
            frames, indices = rdis, np.arange(len(rdis))
        frames = normalize_unit_frames(frames).astype(np.float32)
        rel = entry["file"]
        rio.write_tensor(out_dir / rel, frames)
        out_entry = dict(entry)
        out_entry["n_frames"] = int(len(frames))
        out_entry["frame_range"] = [int(indices[0]), int(indices[-1]) + 1]
        scenes_out.append(out_entry)
    out_manifest = {
        "format": "rdi-frames",
        "format_version": 1,
        "radar_config": manifest["radar_config"],
        "split_fractions": manifest.get("split_fractions"),
        "preprocess": {
            "respd": cfg["respd"],
            "window": cfg["window"] if cfg["respd"] else None,
            "stride": cfg["stride"] if cfg["respd"] else None,
            "source": str(args.input),
            "config_hash": rio.config_hash(cfg),
        },
        "scenes": scenes_out,
    }
    rio.write_manifest(out_dir, out_manifest)
    dt = time.perf_counter() - t0
    _log(f"preprocessed {total_in} frames ({'respd' if cfg['respd'] else 'framewise'}) "
         f"in {dt:.1f}s ({total_in / dt:.0f} frames/s) -> {out_dir}")
    print(json.dumps({"frames_in": total_in,
                      "frames_out": sum(s["n_frames"] for s in scenes_out),
                      "respd": cfg["respd"], "config_hash": out_manifest["preprocess"]["config_hash"]}))
    return 0


# -- shared dataset loading ------------------------------------------------------


def _class_arrays(dataset_dir, manifest, split: str) -> dict[str, np.ndarray]:
    """Per-class image stacks [n, 1, H, W] for one split of an RDI dataset."""
    if manifest.get("format") != "rdi-frames":
        raise ValueError(f"{dataset_dir} is not a preprocessed RDI dataset "
                         f"(format={manifest.get('format')!r})")
    out = {}
    for scenario in ID_SCENARIOS:
        stacks = [
            rio.load_scene(dataset_dir, e)
            for e in manifest["scenes"]
            if e["scenario"] == scenario and e["split"] == split and e["is_id"]
        ]
        if stacks:
            out[scenario] = np.concatenate(stacks)[:, None].astype(np.float32)
    missing = set(ID_SCENARIOS) - set(out)
    if missing:
        raise ValueError(f"split {split!r} has no scenes for classes {sorted(missing)}")
    return out


def _ood_array(dataset_dir, manifest) -> np.ndarray:
    stacks = [
        rio.load_scene(dataset_dir, e)
        for e in manifest["scenes"]
        if not e["is_id"] and e["split"] == "test"
    ]
    if not stacks:
        raise ValueError("dataset has no OOD test scenes")
    return np.concatenate(stacks)[:, None].astype(np.float32)


def _score_batched(model: MultiDecoderModel, images: np.ndarray,
                   batch: int = 256) -> dict[str, np.ndarray]:
    chunks = {c: [] for c in model.classes}
    for start in range(0, len(images), batch):
        errs = model.reconstruction_errors_batch(images[start : start + batch])
        for c, v in errs.items():
            chunks[c].append(v)
    return {c: np.concatenate(v) for c, v in chunks.items()}


# -- train -----------------------------------------------------------------------

TRAIN_DEFAULTS = {
    "batch_size": 32,
    "epochs": 30,
    "learning_rate": 1e-3,
    "optimizer": "adam",
    "adam_beta1": 0.9,
    "adam_beta2": 0.999,
    "adam_eps": 1e-8,
    "seed": 1234,
    "shuffle": True,
    "steps_per_epoch": None,
    "latent_dim": 64,
    "model_seed": 0,
    "dtype": "float32",
}


def cmd_train(args) -> int:
    cfg = _merge_config(TRAIN_DEFAULTS, args.config, {
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "seed": args.seed,
        "steps_per_epoch": args.steps_per_epoch,
        "latent_dim": args.latent_dim,
    })
    manifest = rio.load_manifest(args.input)
    data = _class_arrays(args.input, manifest, "train")
    sizes = {c: len(v) for c, v in data.items()}
    _log(f"training on {sizes} images from {args.input}")
    model = MultiDecoderModel(ModelConfig(
        latent_dim=cfg["latent_dim"], seed=cfg["model_seed"], dtype=cfg["dtype"]))
    train_cfg = TrainConfig.from_dict(cfg)
    t0 = time.perf_counter()
    history = train(model, data, train_cfg, log=_log)
    dt = time.perf_counter() - t0
    meta = {
        "train_config": train_cfg.to_dict(),
        "config_hash": rio.config_hash(cfg),
        "seed": cfg["seed"],
        "dataset": str(args.input),
        "dataset_preprocess": manifest.get("preprocess"),
        "train_seconds": dt,
    }
    rio.save_checkpoint(args.out, model, thresholds=None, meta=meta)
    _log(f"trained {cfg['epochs']} epochs in {dt:.0f}s; final loss {history[-1]:.6f}"
         if history else "trained 0 epochs")
    print(json.dumps({"final_loss": history[-1] if history else None,
                      "epochs": len(history), "checkpoint": str(args.out),
                      "config_hash": meta["config_hash"]}))
    return 0


# -- calibrate ---------------------------------------------------------------------


def cmd_calibrate(args) -> int:
    model, _, meta = rio.load_checkpoint(args.ckpt)
    manifest = rio.load_manifest(args.input)
    held_out = _class_arrays(args.input, manifest, "val")
    thresholds = calibrate(model, held_out, target_tpr=args.tpr)
    meta = dict(meta)
    meta["calibration"] = {
        "dataset": str(args.input),
        "target_tpr": args.tpr,
        "sizes": {c: int(len(v)) for c, v in held_out.items()},
    }
    out = args.out or args.ckpt
    rio.save_checkpoint(out, model, thresholds=thresholds, meta=meta)
    _log(f"calibrated thresholds at TPR {args.tpr}: "
         + ", ".join(f"{c}={t:.6f}" for c, t in thresholds.per_class.items()))
    print(json.dumps({"thresholds": thresholds.per_class, "checkpoint": str(out)}))
    return 0


# -- eval --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    model, thresholds, meta = rio.load_checkpoint(args.ckpt)
    manifest = rio.load_manifest(args.input)
    id_test = _class_arrays(args.input, manifest, "test")
    ood_test = _ood_array(args.input, manifest)

    t0 = time.perf_counter()
    id_errors = {c: _score_batched(model, v) for c, v in id_test.items()}
    ood_errors = _score_batched(model, ood_test)
    dt = time.perf_counter() - t0
    n_scored = sum(len(v) for v in id_test.values()) + len(ood_test)

    per_class = {}
    for c in model.classes:
        id_scores = id_errors[c][c]     # class-c samples through decoder c
        ood_scores = ood_errors[c]      # all OOD samples through decoder c
        per_class[c] = {
            "auroc_pct": 100.0 * auroc(id_scores, ood_scores),
            "aupr_pct": 100.0 * aupr(id_scores, ood_scores),
            "fpr95_pct": 100.0 * fpr_at_tpr(id_scores, ood_scores, 0.95),
            "fpr80_pct": 100.0 * fpr_at_tpr(id_scores, ood_scores, 0.80),
            "median_id_error": float(np.median(id_scores)),
            "median_ood_error": float(np.median(ood_scores)),
            "n_id": int(len(id_scores)),
        }

    verdicts = None
    if thresholds is not None:
        id_ok = ood_ok = 0
        for c in model.classes:
            errs = id_errors[c]
            for i in range(len(errs[model.classes[0]])):
                sample = {cls: float(errs[cls][i]) for cls in model.classes}
                id_ok += classify(sample, thresholds) == VERDICT_ID
        for i in range(len(ood_test)):
            sample = {cls: float(ood_errors[cls][i]) for cls in model.classes}
            ood_ok += classify(sample, thresholds) == VERDICT_OOD
        n_id_total = sum(len(v) for v in id_test.values())
        verdicts = {
            "id_correct": int(id_ok),
            "ood_correct": int(ood_ok),
            "accuracy_pct": 100.0 * (id_ok + ood_ok) / (n_id_total + len(ood_test)),
            "thresholds": thresholds.per_class,
        }

    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "eval-report",
        "positive_class": "OOD",  # higher score = more OOD everywhere in this report
        "checkpoint": str(args.ckpt),
        "checkpoint_meta": meta,
        "dataset": str(args.input),
        "respd": (manifest.get("preprocess") or {}).get("respd"),
        "window": (manifest.get("preprocess") or {}).get("window"),
        "counts": {
            "id_test": {c: int(len(v)) for c, v in id_test.items()},
            "ood_test": int(len(ood_test)),
        },
        "per_class": per_class,
        "verdicts": verdicts,
        "runtime": {
            "frames_scored": int(n_scored),
            "seconds": dt,
            "frames_per_s": n_scored / dt if dt > 0 else None,
        },
        "config_hash": meta.get("config_hash"),
        "seed": meta.get("seed"),
    }
    if args.out:
        rio.write_json(args.out, report)
    for c in model.classes:
        m = per_class[c]
        _log(f"{c:6s} AUROC {m['auroc_pct']:6.2f}  AUPR {m['aupr_pct']:6.2f}  "
             f"FPR95 {m['fpr95_pct']:6.2f}  FPR80 {m['fpr80_pct']:6.2f}")
    print(json.dumps(report))
    return 0


# -- detect ------------------------------------------------------------------------

DETECT_DEFAULTS = {
    "respd": True,
    "window": 50,
    "limit": None,
}


def cmd_detect(args) -> int:
    cfg = _merge_config(DETECT_DEFAULTS, args.config, {
        "respd": args.respd,
        "window": args.window,
        "limit": args.limit,
    })
    model, thresholds, ckpt_meta = rio.load_checkpoint(args.ckpt)
    if thresholds is None:
        raise ValueError(f"checkpoint {args.ckpt} has no thresholds; run calibrate first")

    input_path = Path(args.input)
    if input_path.is_dir():
        manifest = rio.load_manifest(input_path)
        radar = radar_config_from_manifest(manifest)
        scenes = [(e, rio.load_scene(input_path, e, mmap=True)) for e in manifest["scenes"]]
    else:
        radar = RadarConfig()
        scenes = [({"id": 0, "scenario": None}, rio.read_tensor(input_path, mmap=True))]

    window_cfg = FrameWindowConfig(window_size=cfg["window"])
    out_fh = open(args.out, "w") if args.out else None
    latencies: list[float] = []
    steady: list[float] = []
    counts = {VERDICT_ID: 0, VERDICT_OOD: 0}
    processed = 0
    try:
        for entry, data in scenes:
            state = MtiState()
            ring = StreamingWindowSum(window_cfg)
            scene_emitted = 0
            for k in range(len(data)):
                if cfg["limit"] is not None and processed >= cfg["limit"]:
                    break
                frame_data = np.asarray(data[k], dtype=np.float64)
                t0 = time.perf_counter()
                rdi, state = make_rdi(RawFrameCube(frame_data, k), state, radar)
                if cfg["respd"]:
                    window_sum = ring.push(rdi.data)
                else:
                    window_sum = rdi.data
                verdict = None
                if window_sum is not None:
                    image = normalize_unit_frames(window_sum[None])[0]
                    errors = model.reconstruction_errors(image.astype(np.float32))
                    verdict = classify(errors, thresholds)
                latency_ms = (time.perf_counter() - t0) * 1e3
                processed += 1
                if verdict is not None:
                    counts[verdict] += 1
                    latencies.append(latency_ms)
                    scene_emitted += 1
                    if scene_emitted > 5:  # steady state: past warmup and cold caches
                        steady.append(latency_ms)
                    if out_fh:
                        out_fh.write(json.dumps({
                            "scene": entry["id"], "frame": k, "verdict": verdict,
                            "errors": {c: round(v, 8) for c, v in errors.items()},
                            "latency_ms": round(latency_ms, 3),
                        }) + "\n")
            if cfg["limit"] is not None and processed >= cfg["limit"]:
                break
    finally:
        if out_fh:
            out_fh.close()

    lat = np.asarray(steady if steady else latencies)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "detect-summary",
        "frames_processed": processed,
        "verdicts": counts,
        "respd": cfg["respd"],
        "window": cfg["window"] if cfg["respd"] else None,
        "latency_ms": {
            "median": float(np.median(lat)) if len(lat) else None,
            "p90": float(np.percentile(lat, 90)) if len(lat) else None,
            "mean": float(lat.mean()) if len(lat) else None,
            "steady_state_frames": int(len(lat)),
        },
        "thresholds": thresholds.per_class,
        "config_hash": ckpt_meta.get("config_hash"),
        "seed": ckpt_meta.get("seed"),
    }
    if args.summary:
        rio.write_json(args.summary, summary)
    _log(f"processed {processed} frames; verdicts {counts}; "
         f"median steady-state latency "
         f"{summary['latency_ms']['median']:.2f} ms" if latencies else "no frames scored")
    print(json.dumps(summary))
    return 0


# -- entry point --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="radarood",
        description="FMCW radar out-of-distribution detection pipeline",
    )
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="render the synthetic scene recipe to a raw dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--config")
    g.add_argument("--seed", type=int)
    g.add_argument("--scenes-per-id-class", type=int, dest="scenes_per_id_class")
    g.add_argument("--scenes-per-ood-type", type=int, dest="scenes_per_ood_type")
    g.add_argument("--frames-per-scene", type=int, dest="frames_per_scene")
    g.add_argument("--snr", type=float)
    g.set_defaults(fn=cmd_gen)

    pp = sub.add_parser("preprocess", help="raw frames -> normalized RDI dataset")
    pp.add_argument("--in", dest="input", required=True)
    pp.add_argument("--out", required=True)
    pp.add_argument("--config")
    pp.add_argument("--respd", type=_respd_flag, default=None,
                    help="'on' (windowed sums) or 'off' (framewise ablation)")
    pp.add_argument("--window", type=int)
    pp.add_argument("--stride", type=int)
    pp.set_defaults(fn=cmd_preprocess)

    tr = sub.add_parser("train", help="train the reconstruction network")
    tr.add_argument("--in", dest="input", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--config")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--batch-size", type=int, dest="batch_size")
    tr.add_argument("--lr", type=float)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--steps-per-epoch", type=int, dest="steps_per_epoch")
    tr.add_argument("--latent-dim", type=int, dest="latent_dim")
    tr.set_defaults(fn=cmd_train)

    ca = sub.add_parser("calibrate", help="pick per-class thresholds on the val split")
    ca.add_argument("--ckpt", required=True)
    ca.add_argument("--in", dest="input", required=True)
    ca.add_argument("--out", help="output checkpoint (default: overwrite --ckpt)")
    ca.add_argument("--tpr", type=float, default=0.95)
    ca.set_defaults(fn=cmd_calibrate)

    ev = sub.add_parser("eval", help="per-class OOD metrics on the test split")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--in", dest="input", required=True)
    ev.add_argument("--out", help="write the JSON report here")
    ev.set_defaults(fn=cmd_eval)

    de = sub.add_parser("detect", help="stream raw frames to per-frame verdicts")
    de.add_argument("--ckpt", required=True)
    de.add_argument("--in", dest="input", required=True,
                    help="raw dataset dir or a single scene tensor file")
    de.add_argument("--out", help="write per-frame verdicts as JSONL")
    de.add_argument("--summary", help="write the latency/verdict summary JSON here")
    de.add_argument("--config")
    de.add_argument("--respd", type=_respd_flag, default=None)
    de.add_argument("--window", type=int)
    de.add_argument("--limit", type=int, help="stop after this many frames")
    de.set_defaults(fn=cmd_detect)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (PipelineError, ValueError, OSError) as e:
        record = {"error": {"type": type(e).__name__, "message": str(e)}}
        print(json.dumps(record), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
