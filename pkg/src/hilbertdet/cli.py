"""Command-line surface: train, eval, ablate, invariants, erf, scan-report,
gen-data.

Configuration comes from an optional INI-style file plus repeated
section.key=value overrides. Output paths resolve under the
HILBERTDET_OUTPUT_ROOT environment variable. Every subcommand exits nonzero
on validation or numeric failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config
from .data import gen_dataset
from .detect import Detector, detections_to_records, evaluate_detections
from .erf import erf_for_variant, write_csv, write_pgm
from .hilbert import ALL_VARIANTS, HILBERT_VARIANTS, locality_csv
from .invariants import run_invariants
from .module import load_checkpoint
from .tensor import NumericError, ShapeError
from .train import (metrics_payload, predict_scenes, resolve_output_dir,
                    train)

ERF_VARIANTS = ("hilbert-unidir", "hilbert-bidir", "hilbert-fourdir1")

TOGGLE_ROWS = (
    ("scan-only", {"use_hybrid": False, "use_freq_info": False, "use_spatial": False},
     "hilbert-bidir"),
    ("freq-info", {"use_hybrid": True, "use_freq_info": True, "use_spatial": False},
     "hilbert-bidir"),
    ("spatial", {"use_hybrid": True, "use_freq_info": False, "use_spatial": True},
     "hilbert-bidir"),
    ("raster-full", {"use_hybrid": True, "use_freq_info": True, "use_spatial": True},
     "raster-bidir"),
    ("full", {"use_hybrid": True, "use_freq_info": True, "use_spatial": True},
     "hilbert-bidir"),
)


def _add_config_args(p: argparse.ArgumentParser):
    p.add_argument("--config", default=None, help="INI-style config file")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config value")


def _load(args):
    return load_config(args.config, args.overrides)


def cmd_train(args) -> int:
    cfg = _load(args)
    payload = train(cfg, log=lambda msg: print(msg, flush=True))
    print(json.dumps(payload["metrics"], indent=2, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cfg = _load(args)
    model = Detector(cfg.model, np.random.default_rng([abs(cfg.seed), 1]))
    load_checkpoint(args.checkpoint, model, strict=not args.partial)
    splits = gen_dataset(cfg.seed, cfg.dataset_size, cfg.model.image_size,
                         classes_by_type=cfg.classes_by_type)
    scenes = splits[args.split]
    preds = predict_scenes(model, scenes, cfg)
    metrics = evaluate_detections(preds, [s.boxes for s in scenes])
    payload = metrics_payload("eval", cfg, metrics, [], model.parameter_count())
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "eval_metrics.json"), "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "predictions.records"), "w") as f:
        f.write("\n".join(detections_to_records(preds)) + "\n")
    with open(os.path.join(out_dir, "ground_truth.records"), "w") as f:
        f.write("\n".join(
            detections_to_records([s.boxes for s in scenes])) + "\n")
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return 0


def cmd_ablate(args) -> int:
    cfg = _load(args)
    rows = []
    jobs = []
    if args.grid in ("toggles", "both"):
        for name, toggles, variant in TOGGLE_ROWS:
            jobs.append((f"toggles/{name}",
                         dict(toggles, scan_variant=variant)))
    if args.grid in ("scans", "both"):
        for variant in HILBERT_VARIANTS:
            jobs.append((f"scans/{variant}",
                         {"use_hybrid": True, "use_freq_info": True,
                          "use_spatial": True, "scan_variant": variant}))
    for name, model_overrides in jobs:
        run_cfg = replace(cfg, model=replace(cfg.model, **model_overrides),
                          output_dir=os.path.join(cfg.output_dir, name))
        print(f"[ablate] {name}", flush=True)
        payload = train(run_cfg)
        payload["ablation_row"] = name
        rows.append(payload)
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump(rows, f, indent=2, sort_keys=True)
    header = f"{'row':<22}" + "".join(
        f"{k:>8}" for k in ("AP50", "AP60", "AP70", "mAP", "AR50", "AR60",
                            "AR70", "mAR"))
    lines = [header]
    for row in rows:
        m = row["metrics"]
        lines.append(f"{row['ablation_row']:<22}" + "".join(
            f"{m[k]:>8.3f}" for k in ("AP50", "AP60", "AP70", "mAP", "AR50",
                                      "AR60", "AR70", "mAR")))
    table = "\n".join(lines)
    with open(os.path.join(out_dir, "ablation.txt"), "w") as f:
        f.write(table + "\n")
    print(table)
    return 0


def cmd_invariants(args) -> int:
    report = run_invariants(corrupt=args.corrupt)
    out = {"schema": "hilbertdet-invariants-v1", "cases": report}
    print(json.dumps(out, indent=2, sort_keys=True))
    failures = [c for c in report if c["status"] != "pass"]
    for c in report:
        mark = "PASS" if c["status"] == "pass" else "FAIL"
        print(f"[{mark}] {c['suite']}: {c['case']} "
              f"(measured {c['measured']:.3g}, tolerance {c['tolerance']:.3g})",
              file=sys.stderr)
    return 1 if failures else 0


def cmd_erf(args) -> int:
    cfg = _load(args)
    out_dir = resolve_output_dir(args.out or cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    variants = args.variants.split(",") if args.variants else list(ERF_VARIANTS)
    for v in variants:
        if v not in ALL_VARIANTS:
            raise ConfigError(f"unknown scan variant {v!r}")
        grid = erf_for_variant(v, cfg.model, cfg.seed)
        write_csv(os.path.join(out_dir, f"erf_{v}.csv"), grid)
        write_pgm(os.path.join(out_dir, f"erf_{v}.pgm"), grid)
        print(f"wrote erf_{v}.csv / .pgm (peak 1.0, "
              f"grid {grid.shape[0]}x{grid.shape[1]})")
    return 0


def cmd_scan_report(args) -> int:
    if args.size < 1 or args.size & (args.size - 1):
        raise ConfigError(f"scan-report needs a power-of-two size, got {args.size}")
    csv_text = locality_csv(args.size, args.size)
    if args.out:
        path = resolve_output_dir(args.out)
        os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
        with open(path, "w") as f:
            f.write(csv_text)
    print(csv_text, end="")
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    splits = gen_dataset(cfg.seed, cfg.dataset_size, cfg.model.image_size,
                         classes_by_type=cfg.classes_by_type)
    out_dir = resolve_output_dir(cfg.output_dir)
    os.makedirs(out_dir, exist_ok=True)
    for name, scenes in splits.items():
        rows = [[i, b.class_id, b.x1, b.y1, b.x2, b.y2]
                for i, s in enumerate(scenes) for b in s.boxes]
        np.savez(
            os.path.join(out_dir, f"{name}.npz"),
            images=np.stack([s.image for s in scenes]),
            boxes=np.asarray(rows, dtype=np.float64).reshape(len(rows), 6))
        print(f"{name}: {len(scenes)} scenes, {len(rows)} boxes")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hilbertdet",
        description="Hilbert-scan state-space detector harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train on the synthetic task")
    _add_config_args(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "test", "val"))
    p.add_argument("--partial", action="store_true",
                   help="allow loading a checkpoint with missing keys")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the toggle and scan-variant grids")
    _add_config_args(p)
    p.add_argument("--grid", default="both", choices=("toggles", "scans", "both"))
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("invariants", help="run the aggregated property suite")
    p.add_argument("--corrupt", default=None, choices=("dct-normalization",),
                   help=argparse.SUPPRESS)
    p.set_defaults(fn=cmd_invariants)

    p = sub.add_parser("erf", help="effective receptive field maps")
    _add_config_args(p)
    p.add_argument("--variants", default=None,
                   help="comma-separated scan variants (default: the standard trio)")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_erf)

    p = sub.add_parser("scan-report", help="locality CSV across scan variants")
    p.add_argument("--size", type=int, default=16)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_scan_report)

    p = sub.add_parser("gen-data", help="generate and save the synthetic splits")
    _add_config_args(p)
    p.set_defaults(fn=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ShapeError, NumericError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
