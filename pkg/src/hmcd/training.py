"""Target building, the optimization loop, and batched inference."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .boxes import ChangeBox, Detection
from .dataset import Sample, group_clips
from .diffnet.anchors import anchors_for_scale, decode_boxes, encode_box, fit_anchors, wh_iou, sort_by_area
from .diffnet.checkpoint import init_from_checkpoint, save_checkpoint
from .diffnet.model import NUM_ANCHORS, STRIDES, DiffNet, ModelConfig
from .diffnet.nms import DEFAULT_IOU, DEFAULT_SCORE_FLOOR, nms
from .errors import ContractError, ShapeError, TrainingDivergedError
from .losses import LossBreakdown, LossConfig, ScaleTargets, TargetTensor, total_loss

log = logging.getLogger(__name__)

LOSS_CSV_COLUMNS = ("step", "l_giou", "l_conf", "l_prob", "total")


@dataclass(frozen=True)
class TrainConfig:
    preset: str = "tiny"
    input_size: int = 224
    batch_size: int = 8
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    lr_schedule: str = "constant"
    lr_final_ratio: float = 0.01
    epochs: int = 100
    max_steps: int | None = None
    target_loss: float | None = None
    seed: int = 0
    temporal: bool = False
    clip_len: int = 8
    log_every: int = 25
    init_from: str | None = None

    def __post_init__(self) -> None:
        if self.input_size % 32:
            raise ContractError("input_size must be divisible by 32")
        if self.temporal and self.clip_len < 2:
            raise ContractError("clip_len must be >= 2 in temporal mode")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ContractError(f"unknown lr_schedule {self.lr_schedule!r}")
        if self.optimizer not in ("adam", "sgd_momentum"):
            raise ContractError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True)
class NmsConfig:
    mode: str = "soft_linear"
    iou: float = DEFAULT_IOU
    score_floor: float = DEFAULT_SCORE_FLOOR
    conf: float = 0.25


@dataclass
class TrainResult:
    model: DiffNet
    anchors: np.ndarray
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None
    seconds: float = 0.0


def build_targets(labels: Sequence[ChangeBox], anchors, input_size: int) -> TargetTensor:
    """Targets for one image (batch dimension of 1).

    Each box goes to the anchor whose prior best matches its size (IoU of
    center-aligned boxes, ties to the lower index). If that cell/anchor slot
    is already taken the next best anchor is used, so every kept box owns
    exactly one responsible anchor. Boxes under one pixel are skipped.
    """
    anchors = sort_by_area(anchors)
    scales = []
    for s, stride in enumerate(STRIDES):
        n = input_size // stride
        scales.append(ScaleTargets(
            obj=torch.zeros(1, NUM_ANCHORS, n, n, dtype=torch.bool),
            boxes=torch.zeros(1, NUM_ANCHORS, n, n, 4, dtype=torch.float64),
            t=torch.zeros(1, NUM_ANCHORS, n, n, 4, dtype=torch.float64),
            conf=torch.zeros(1, NUM_ANCHORS, n, n, dtype=torch.float64),
            classes=torch.zeros(1, NUM_ANCHORS, n, n, 3, dtype=torch.float64),
        ))
    for box in labels:
        if box.w < 1 or box.h < 1:
            log.warning("skipping %.2fx%.2f px box (smaller than one pixel)", box.w, box.h)
            continue
        ious = wh_iou(np.array([[box.w, box.h]]), anchors)[0]
        for k in sorted(range(len(anchors)), key=lambda k: (-ious[k], k)):
            scale = len(STRIDES) - 1 - k // NUM_ANCHORS
            a = k % NUM_ANCHORS
            stride = STRIDES[scale]
            n = input_size // stride
            i, j, t = encode_box(box.cx, box.cy, box.w, box.h, anchors_for_scale(anchors, scale)[a], stride)
            if not (0 <= i < n and 0 <= j < n):
                i, j = min(max(i, 0), n - 1), min(max(j, 0), n - 1)
                t = _encode_in_cell(box, anchors_for_scale(anchors, scale)[a], stride, i, j)
            tgt = scales[scale]
            if tgt.obj[0, a, i, j]:
                continue
            tgt.obj[0, a, i, j] = True
            tgt.boxes[0, a, i, j] = torch.as_tensor(box.xyxy)
            tgt.t[0, a, i, j] = torch.as_tensor(t)
            tgt.conf[0, a, i, j] = 1.0
            tgt.classes[0, a, i, j, box.category.index] = 1.0
            break
        else:
            log.warning("no free anchor slot for box at (%.1f, %.1f)", box.cx, box.cy)
    return TargetTensor(scales)


def _encode_in_cell(box: ChangeBox, anchor, stride: int, i: int, j: int, eps: float = 1e-9) -> np.ndarray:
    fx = np.clip(box.cx / stride - j, eps, 1 - eps)
    fy = np.clip(box.cy / stride - i, eps, 1 - eps)
    return np.array([np.log(fx / (1 - fx)), np.log(fy / (1 - fy)),
                     np.log(box.w / anchor[0]), np.log(box.h / anchor[1])])


def concat_targets(parts: Sequence[TargetTensor]) -> TargetTensor:
    scales = []
    for s in range(len(STRIDES)):
        items = [p.scales[s] for p in parts]
        scales.append(ScaleTargets(*(torch.cat([getattr(it, f) for it in items]) for f in
                                     ("obj", "boxes", "t", "conf", "classes"))))
    return TargetTensor(scales)


def to_tensors(samples: Sequence[Sample], dtype=torch.float32) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack samples into ``B x 3 x H x W`` images and ``B x C x H x W`` rasters in [0, 1]."""
    images = np.stack([s.image for s in samples]).astype(np.float32) / 255.0
    rasters = np.stack([s.raster for s in samples]).astype(np.float32) / 255.0
    return (torch.from_numpy(images).permute(0, 3, 1, 2).to(dtype).contiguous(),
            torch.from_numpy(rasters).permute(0, 3, 1, 2).to(dtype).contiguous())


def _check_sizes(samples: Sequence[Sample], input_size: int) -> None:
    for s in samples:
        if s.image.shape[:2] != (input_size, input_size):
            raise ShapeError(f"sample {s.name}: image {s.image.shape[:2]} does not match input_size {input_size}")


def set_determinism(seed: int) -> None:
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(True)


def _make_optimizer(params, cfg: TrainConfig):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9)


def _make_schedule(opt, cfg: TrainConfig, horizon: int):
    if cfg.lr_schedule == "constant":
        return torch.optim.lr_scheduler.LambdaLR(opt, lambda k: 1.0)
    floor = cfg.lr_final_ratio

    def factor(k: int) -> float:
        frac = min(k / max(horizon, 1), 1.0)
        return floor + (1 - floor) * 0.5 * (1 + math.cos(math.pi * frac))

    return torch.optim.lr_scheduler.LambdaLR(opt, factor)


def _windows(samples: Sequence[Sample], clip_len: int) -> list[list[Sample]]:
    out = []
    for frames in group_clips(samples).values():
        intr = {None if f.intrinsics is None else f.intrinsics for f in frames}
        if len(intr) > 1:
            raise ContractError(f"clip {frames[0].clip_id} mixes camera intrinsics")
        for start in range(0, len(frames), clip_len):
            out.append(frames[start:start + clip_len])
    return out


def train(
    samples: Sequence[Sample],
    cfg: TrainConfig,
    loss_cfg: LossConfig = LossConfig(),
    out_dir: str | Path | None = None,
    anchors=None,
) -> TrainResult:
    """Minimize the total loss over ``samples``; optionally write checkpoint + loss CSV.

    Stops after ``cfg.epochs`` passes, ``cfg.max_steps`` steps, or as soon as
    an epoch's mean per-image loss drops below ``cfg.target_loss``. With
    ``cfg.init_from`` the weights (and anchors) of an earlier checkpoint are
    the starting point, e.g. a single-frame model for recurrent fine-tuning.
    """
    if not samples:
        raise ContractError("cannot train on an empty dataset")
    _check_sizes(samples, cfg.input_size)
    set_determinism(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = DiffNet(ModelConfig(cfg.preset, cfg.input_size, samples[0].raster.shape[2], cfg.temporal))
    if cfg.init_from:
        # fine-tuning keeps the head's anchor priors unless new ones are given
        start_anchors = init_from_checkpoint(model, cfg.init_from)
        anchors = start_anchors if anchors is None else anchors
    if anchors is None:
        wh = np.array([[b.w, b.h] for s in samples for b in s.boxes]).reshape(-1, 2)
        anchors = fit_anchors(wh, cfg.input_size, seed=cfg.seed)
    anchors = sort_by_area(anchors)
    model.train()
    opt = _make_optimizer(model.parameters(), cfg)

    if cfg.temporal:
        units = _windows(samples, cfg.clip_len)
        unit_targets = [[build_targets(f.boxes, anchors, cfg.input_size) for f in w] for w in units]
    else:
        units = [[s] for s in samples]
        unit_targets = [[build_targets(s.boxes, anchors, cfg.input_size)] for s in samples]

    steps_per_epoch = math.ceil(len(units) / cfg.batch_size)
    horizon = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        horizon = min(horizon, cfg.max_steps)
    sched = _make_schedule(opt, cfg, horizon)

    history: list[dict] = []
    step = 0
    t0 = time.perf_counter()
    done = False
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(units))
        epoch_losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            parts = _step_loss(model, [units[k] for k in idx], [unit_targets[k] for k in idx],
                               anchors, loss_cfg, cfg.temporal)
            if not torch.isfinite(parts.total):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step}: {parts.as_floats()}; try a lower learning rate")
            opt.zero_grad()
            parts.total.backward()
            opt.step()
            sched.step()
            row = {"step": step, **parts.as_floats()}
            history.append(row)
            epoch_losses.append((row["total"], len(idx)))
            if cfg.log_every and step % cfg.log_every == 0:
                log.info("step %d %s", step, " ".join(f"{k}={v:.4f}" for k, v in row.items() if k != "step"))
            step += 1
            if cfg.max_steps is not None and step >= cfg.max_steps:
                done = True
                break
        mean_loss = sum(l * n for l, n in epoch_losses) / max(sum(n for _, n in epoch_losses), 1)
        if cfg.target_loss is not None and mean_loss < cfg.target_loss:
            log.info("epoch %d: loss %.4f below target %.4f", epoch, mean_loss, cfg.target_loss)
            break
        if done:
            break

    model.eval()
    result = TrainResult(model, anchors, history, seconds=time.perf_counter() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_loss_csv(out / "loss.csv", history)
        result.checkpoint = out / "model.safetensors"
        save_checkpoint(result.checkpoint, model, anchors, {"train": asdict(cfg)})
    return result


def _step_loss(model, units, unit_targets, anchors, loss_cfg, temporal) -> LossBreakdown:
    if not temporal:
        images, rasters = to_tensors([u[0] for u in units])
        raw = model(images, rasters)
        return total_loss(raw, concat_targets([t[0] for t in unit_targets]), anchors, loss_cfg)
    # clips in one batch must share a length; shorter windows run separately
    by_len: dict[int, list[int]] = {}
    for k, u in enumerate(units):
        by_len.setdefault(len(u), []).append(k)
    terms = []
    for length, ks in sorted(by_len.items()):
        state = None
        for t in range(length):
            images, rasters = to_tensors([units[k][t] for k in ks])
            raw, state = model.step(images, rasters, state)
            terms.append((total_loss(raw, concat_targets([unit_targets[k][t] for k in ks]), anchors, loss_cfg),
                          len(ks)))
    n = sum(w for _, w in terms)
    agg = [sum(getattr(p, f) * w for p, w in terms) / n for f in ("total", "l_giou", "l_conf", "l_prob")]
    return LossBreakdown(*agg)


def write_loss_csv(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOSS_CSV_COLUMNS)
        w.writeheader()
        for row in history:
            w.writerow({k: (row[k] if k == "step" else f"{row[k]:.8g}") for k in LOSS_CSV_COLUMNS})


def postprocess(raw, anchors, nms_cfg: NmsConfig = NmsConfig()) -> list[list[Detection]]:
    return [nms(d, nms_cfg.iou, nms_cfg.mode, nms_cfg.score_floor)
            for d in decode_boxes(raw, anchors, nms_cfg.conf)]


@torch.no_grad()
def predict(model: DiffNet, anchors, samples: Sequence[Sample], nms_cfg: NmsConfig = NmsConfig(),
            batch_size: int = 16) -> list[list[Detection]]:
    model.eval()
    out: list[list[Detection]] = []
    for start in range(0, len(samples), batch_size):
        images, rasters = to_tensors(samples[start:start + batch_size])
        out.extend(postprocess(model(images, rasters), anchors, nms_cfg))
    return out


@torch.no_grad()
def predict_clips(model: DiffNet, anchors, samples: Sequence[Sample],
                  nms_cfg: NmsConfig = NmsConfig()) -> dict[str, list[list[Detection]]]:
    """Per-clip, per-frame detections; the recurrent model carries state through each clip."""
    model.eval()
    result = {}
    for clip_id, frames in group_clips(samples).items():
        if len({f.intrinsics for f in frames}) > 1:
            raise ContractError(f"clip {clip_id} mixes camera intrinsics")
        if model.lstm is None:
            result[clip_id] = predict(model, anchors, frames, nms_cfg)
            continue
        images, rasters = to_tensors(frames)
        preds, _ = model.forward_temporal(images[None], rasters[None])
        result[clip_id] = [postprocess(p, anchors, nms_cfg)[0] for p in preds]
    return result


def loss_window_monotone(history: Sequence[dict], window: int = 50) -> bool:
    """True when each window's mean loss is no higher than the previous window's."""
    totals = np.array([h["total"] for h in history])
    means = [totals[k:k + window].mean() for k in range(0, len(totals) - window + 1, window)]
    return all(b <= a for a, b in zip(means, means[1:])) and all(math.isfinite(m) for m in means)
