"""Command-line entry point: ``hmcd <command> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage, schema or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import torch

from .camera import FRAMES_SCHEMA_VERSION, read_png
from .config import RunConfig, validate
from .dataset import group_clips, load_clip_categories, load_dataset, synthesize_dataset
from .diffnet.checkpoint import CHECKPOINT_SCHEMA_VERSION, load_checkpoint
from .errors import CheckpointMismatchError, HMCDError
from .evaluation import (
    REPORT_SCHEMA_VERSION,
    build_report,
    clip_classify,
    labels_as_detections,
    map_metric,
    match_dataset,
    prf,
    top1,
    write_pr_csv,
    write_report,
)
from .map_model import MAP_SCHEMA_VERSION
from .synthesis import LABELS_SCHEMA_VERSION

log = logging.getLogger("hmcd")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _versions() -> str:
    return (f"hmcd schemas: map={MAP_SCHEMA_VERSION} frames={FRAMES_SCHEMA_VERSION} "
            f"labels={LABELS_SCHEMA_VERSION} checkpoint={CHECKPOINT_SCHEMA_VERSION} "
            f"report={REPORT_SCHEMA_VERSION}")


def _load_config(path) -> RunConfig:
    cfg = RunConfig.load(path)
    validate(cfg)
    return cfg


def cmd_scene(args) -> int:
    from .scene import make_sicd_scene, make_vscd_scene

    if args.mode == "sicd":
        map_path, frames = make_sicd_scene(args.out, args.frames, args.seed, args.size)
    else:
        map_path, frames = make_vscd_scene(args.out, args.clips, args.clip_len, args.seed, args.size)
    print(f"map: {map_path}\nframes: {frames}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    for p in (args.map, args.frames):
        if not Path(p).is_file():
            raise FileNotFoundError(f"no such file: {p}")
    seed = cfg.seed if args.seed is None else args.seed
    summary = synthesize_dataset(
        args.mode, args.map, args.frames, args.out, seed,
        roi=cfg.roi.to_roi(), prior_threshold=cfg.synth.prior_threshold, p_del=cfg.synth.p_del,
        vote_threshold=cfg.eval.vote_threshold,
    )
    counts = " ".join(f"{k}={v}" for k, v in summary["counts"].items())
    print(f"{summary['frames']} frames, {summary['clips']} clips: {counts}")
    print(f"labels sha256: {summary['labels_sha256']}")
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import train

    cfg = _load_config(args.config)
    samples = load_dataset(args.data)
    anchors = np.asarray(cfg.model.anchors, dtype=float) if cfg.model.anchors else None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_json(), indent=1, sort_keys=True) + "\n")
    res = train(samples, cfg.train_config(), cfg.loss.to_loss(), out, anchors=anchors)
    last = res.history[-1]
    print(f"{len(res.history)} steps in {res.seconds:.1f}s, final loss {last['total']:.4f}")
    print(f"checkpoint: {res.checkpoint}")
    return EXIT_OK


def _model_from(args, cfg: RunConfig, temporal: bool | None = None):
    preset = cfg.model.preset if args.config else None
    return load_checkpoint(args.checkpoint, expect_preset=preset, expect_temporal=temporal)


def cmd_eval(args) -> int:
    from .training import predict

    cfg = _load_config(args.config)
    model, anchors, header = _model_from(args, cfg)
    samples = load_dataset(args.data)
    dets = predict(model, anchors, samples, cfg.nms.to_nms())
    gts = [s.boxes for s in samples]
    m = map_metric(dets, gts, cfg.eval.iou_thresh)
    metrics = prf(match_dataset(dets, gts, cfg.eval.iou_thresh))
    report = build_report(prf_metrics=metrics, map_result=m, headline=args.headline,
                          config={"run": cfg.to_json(), "checkpoint": header},
                          extra={"frames": len(samples)})
    write_report(args.report, report)
    write_pr_csv(Path(args.report).parent, m.curves)
    if args.plots:
        from .plotting import plot_pr_curves

        plot_pr_curves(m.curves, Path(args.plots) / "pr_curves.png")
    if args.headline == "map":
        print(f"mAP@{cfg.eval.iou_thresh:g} = {report['map']}")
    else:
        mi = metrics["micro"]
        print(f"P={mi['precision']:.4f} R={mi['recall']:.4f} F={mi['f_score']:.4f}")
    return EXIT_OK


def cmd_eval_clips(args) -> int:
    from .training import predict_clips

    cfg = _load_config(args.config)
    samples = load_dataset(args.clips)
    truth = load_clip_categories(args.clips)
    if args.oracle:
        per_clip = {cid: [labels_as_detections(f.boxes) for f in frames]
                    for cid, frames in group_clips(samples).items()}
        header = {"oracle": "labels"}
    else:
        if not args.checkpoint:
            raise FileNotFoundError("--checkpoint is required unless --oracle is given")
        model, anchors, header = _model_from(args, cfg)
        per_clip = predict_clips(model, anchors, samples, cfg.nms.to_nms())
    verdicts = [clip_classify(d, cfg.eval.vote_threshold, cid) for cid, d in per_clip.items()]
    acc = top1(verdicts, truth)
    report = build_report(top1_value=acc, headline="top1",
                          config={"run": cfg.to_json(), "checkpoint": header},
                          extra={"clips": [dict(v.to_json(), truth=truth[v.clip_id].value) for v in verdicts]})
    write_report(args.report, report)
    print(f"top-1 = {acc:.4f} over {len(verdicts)} clips")
    return EXIT_OK


@torch.no_grad()
def cmd_heatmaps(args) -> int:
    from .plotting import write_heatmaps
    from .training import to_tensors
    from .dataset import Sample

    cfg = _load_config(args.config)
    model, _, _ = _model_from(args, cfg)
    frame = Path(args.frame)
    raster_path = Path(args.raster) if args.raster else frame.parent.parent / "rasters" / frame.name
    raster = read_png(raster_path)
    if raster.ndim == 2:
        raster = raster[..., None]
    sample = Sample(frame.stem, read_png(frame), raster, [], "", 0)
    images, rasters = to_tensors([sample])
    if model.lstm is None:
        result = model(images, rasters, return_features=True)
    else:
        result, _ = model.step(images, rasters, None, return_features=True)
    paths = write_heatmaps(result.pcd_features, args.out, args.channels, upscale_to=images.shape[-1])
    print(f"wrote {len(paths)} heatmaps to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hmcd", description="HD-map change detection: data synthesis, training, evaluation.")
    p.add_argument("--version", action="version", version=_versions())
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("scene", help="render a synthetic world and camera frames")
    s.add_argument("mode", choices=("sicd", "vscd"))
    s.add_argument("--out", required=True)
    s.add_argument("--frames", type=int, default=20, help="number of frames (sicd)")
    s.add_argument("--clips", type=int, default=5, help="number of clips (vscd)")
    s.add_argument("--clip-len", type=int, default=8)
    s.add_argument("--size", type=int, default=128, help="square image size in pixels")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scene)

    s = sub.add_parser("synth", help="synthesize a change-detection dataset from a map and frames")
    s.add_argument("mode", choices=("sicd", "vscd"))
    s.add_argument("--map", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train a model on a synthesized dataset")
    s.add_argument("--config")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="per-frame metrics (P/R/F and mAP)")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--headline", choices=("map", "prf"), default="map")
    s.add_argument("--plots", help="directory for PR-curve PNGs")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("eval-clips", help="clip-level voting and top-1 accuracy")
    s.add_argument("--checkpoint")
    s.add_argument("--clips", required=True, help="VSCD dataset directory")
    s.add_argument("--report", required=True)
    s.add_argument("--oracle", action="store_true", help="use the labels themselves as detections")
    s.add_argument("--config")
    s.set_defaults(func=cmd_eval_clips)

    s = sub.add_parser("heatmaps", help="write difference-feature heatmaps for one frame")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--frame", required=True, help="camera image PNG")
    s.add_argument("--raster", help="map raster PNG (default: ../rasters/<same name>)")
    s.add_argument("--out", required=True)
    s.add_argument("--channels", type=int, nargs="+", default=[0, 1, 2])
    s.add_argument("--config")
    s.set_defaults(func=cmd_heatmaps)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (FileNotFoundError, CheckpointMismatchError, ValueError) as exc:
        print(f"hmcd: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HMCDError, RuntimeError, OSError) as exc:
        print(f"hmcd: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
