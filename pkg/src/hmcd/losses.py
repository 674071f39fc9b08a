"""Training objective: GIoU localization, focal-weighted confidence, category cross-entropy."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

from .diffnet.anchors import anchors_for_scale, decode_scale
from .diffnet.model import STRIDES
from .errors import ContractError, ShapeError


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 1.0
    lambda2: float = 1.0
    lambda3: float = 1.0
    alpha: float = 0.5
    gamma: float = 2.0
    lambda_obj: float = 1.0
    lambda_noobj: float = 0.5

    def __post_init__(self) -> None:
        weights = (self.lambda1, self.lambda2, self.lambda3, self.lambda_obj, self.lambda_noobj, self.gamma)
        if any(w < 0 for w in weights):
            raise ContractError("loss weights and gamma must be non-negative")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError("alpha must lie in [0, 1]")


@dataclass
class ScaleTargets:
    """Targets for one prediction scale; leading dims are ``B x 3 x S x S``."""

    obj: torch.Tensor  # bool, responsible anchors
    boxes: torch.Tensor  # ... x 4, ground truth in corner form
    t: torch.Tensor  # ... x 4, (tx, ty, tw, th) regression targets
    conf: torch.Tensor  # float, 1 at responsible anchors
    classes: torch.Tensor  # ... x 3, one-hot (correct, to_del, to_add)


@dataclass
class TargetTensor:
    scales: list[ScaleTargets]

    @property
    def num_objects(self) -> int:
        return int(sum(int(s.obj.sum()) for s in self.scales))


@dataclass
class LossBreakdown:
    total: torch.Tensor
    l_giou: torch.Tensor
    l_conf: torch.Tensor
    l_prob: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l_giou", "l_conf", "l_prob", "total")}


def cxcywh_to_xyxy(b: torch.Tensor) -> torch.Tensor:
    cx, cy, w, h = b.unbind(-1)
    return torch.stack([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2], dim=-1)


def giou(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Generalized IoU of corner-form boxes, broadcasting over leading dims."""
    a = torch.as_tensor(a, dtype=torch.float64) if not torch.is_tensor(a) else a
    b = torch.as_tensor(b, dtype=a.dtype) if not torch.is_tensor(b) else b
    area_a = (a[..., 2] - a[..., 0]) * (a[..., 3] - a[..., 1])
    area_b = (b[..., 2] - b[..., 0]) * (b[..., 3] - b[..., 1])
    if bool(torch.any(area_a <= 0)) or bool(torch.any(area_b <= 0)):
        raise ContractError("GIoU needs boxes with positive area")
    iw = (torch.minimum(a[..., 2], b[..., 2]) - torch.maximum(a[..., 0], b[..., 0])).clamp(min=0)
    ih = (torch.minimum(a[..., 3], b[..., 3]) - torch.maximum(a[..., 1], b[..., 1])).clamp(min=0)
    inter = iw * ih
    union = area_a + area_b - inter
    hull = ((torch.maximum(a[..., 2], b[..., 2]) - torch.minimum(a[..., 0], b[..., 0]))
            * (torch.maximum(a[..., 3], b[..., 3]) - torch.minimum(a[..., 1], b[..., 1])))
    return inter / union - (hull - union) / hull


def loss_giou(preds: torch.Tensor, gts: torch.Tensor) -> torch.Tensor:
    """``1 - mean GIoU`` over paired ``N x 4`` boxes; 0 when there are no pairs."""
    if preds.shape != gts.shape:
        raise ShapeError(f"paired boxes differ in shape: {tuple(preds.shape)} vs {tuple(gts.shape)}")
    if preds.numel() == 0:
        return preds.sum() * 0.0
    return 1.0 - giou(preds, gts).mean()


def loss_conf(conf_logits: torch.Tensor, target_conf: torch.Tensor, obj: torch.Tensor,
              cfg: LossConfig = LossConfig()) -> torch.Tensor:
    """Focal-weighted sigmoid cross-entropy, summed over all anchors.

    Responsible anchors weigh ``lambda_obj * alpha``, the others
    ``lambda_noobj * (1 - alpha)``; both carry the modulating factor
    ``|target - sigmoid(logit)| ** gamma``.
    """
    if not (conf_logits.shape == target_conf.shape == obj.shape):
        raise ShapeError("confidence logits, targets and mask must share a shape")
    p = torch.sigmoid(conf_logits)
    ce = F.binary_cross_entropy_with_logits(conf_logits, target_conf, reduction="none")
    focal = (target_conf - p).abs().pow(cfg.gamma) * ce
    obj = obj.to(focal.dtype)
    return (cfg.lambda_obj * cfg.alpha * (obj * focal).sum()
            + cfg.lambda_noobj * (1.0 - cfg.alpha) * ((1.0 - obj) * focal).sum())


def loss_prob(class_logits: torch.Tensor, target_onehot: torch.Tensor) -> torch.Tensor:
    """Softmax cross-entropy summed over the given (object) cells, ``N x 3`` each."""
    if class_logits.shape != target_onehot.shape:
        raise ShapeError("class logits and one-hot targets must share a shape")
    if class_logits.numel() == 0:
        return class_logits.sum() * 0.0
    return -(target_onehot * F.log_softmax(class_logits, dim=-1)).sum()


def total_loss(raw: Sequence[torch.Tensor], targets: TargetTensor, anchors,
               cfg: LossConfig = LossConfig()) -> LossBreakdown:
    """Weighted sum over the three scales, normalized per image.

    The GIoU term is the mean over every responsible pair in the batch; the
    confidence and category sums are divided by the batch size.
    """
    batch = raw[0].shape[0]
    preds, gts = [], []
    l_conf = raw[0].new_zeros(())
    l_prob = raw[0].new_zeros(())
    for scale, (r, tgt, stride) in enumerate(zip(raw, targets.scales, STRIDES)):
        d = decode_scale(r, anchors_for_scale(anchors, scale), stride)
        if d["conf_logit"].shape != tgt.obj.shape:
            raise ShapeError(f"scale {scale}: prediction grid {tuple(d['conf_logit'].shape)} "
                             f"does not match targets {tuple(tgt.obj.shape)}")
        obj = tgt.obj
        preds.append(cxcywh_to_xyxy(d["boxes"][obj]))
        gts.append(tgt.boxes[obj].to(r.dtype))
        l_conf = l_conf + loss_conf(d["conf_logit"], tgt.conf.to(r.dtype), obj, cfg)
        l_prob = l_prob + loss_prob(d["class_logits"][obj], tgt.classes[obj].to(r.dtype))
    l_giou = loss_giou(torch.cat(preds), torch.cat(gts))
    l_conf = l_conf / batch
    l_prob = l_prob / batch
    total = cfg.lambda1 * l_giou + cfg.lambda2 * l_conf + cfg.lambda3 * l_prob
    return LossBreakdown(total, l_giou, l_conf, l_prob)
