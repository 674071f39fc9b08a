import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from hmcd.boxes import ChangeBox, ChangeCategory, iou
from hmcd.diffnet import anchors as A
from hmcd.errors import ContractError
from hmcd.losses import LossConfig, giou, loss_conf, loss_giou, loss_prob, total_loss
from hmcd.training import build_targets, concat_targets

D = torch.float64


def _t(*rows):
    return torch.tensor(rows, dtype=D)


def test_giou_identical():
    assert float(giou(_t(1, 2, 5, 9), _t(1, 2, 5, 9))) == 1.0


def test_giou_hand_examples():
    assert float(giou(_t(0, 0, 10, 10), _t(5, 0, 15, 10))) == pytest.approx(1 / 3, abs=1e-12)
    assert float(giou(_t(0, 0, 10, 10), _t(20, 0, 30, 10))) == pytest.approx(-1 / 3, abs=1e-12)


def test_giou_rejects_empty_box():
    with pytest.raises(ContractError):
        giou(_t(0, 0, 0, 5), _t(0, 0, 1, 1))


boxes = st.tuples(st.floats(-50, 50), st.floats(-50, 50), st.floats(0.5, 40), st.floats(0.5, 40)).map(
    lambda b: (b[0], b[1], b[0] + b[2], b[1] + b[3]))


@settings(max_examples=200, deadline=None)
@given(a=boxes, b=boxes)
def test_giou_properties(a, b):
    g_ab, g_ba = float(giou(_t(*a), _t(*b))), float(giou(_t(*b), _t(*a)))
    assert g_ab == pytest.approx(g_ba, abs=1e-12)
    assert -1.0 <= g_ab <= iou(a, b) + 1e-12
    loss = float(loss_giou(_t(a), _t(b)))
    assert 0.0 <= loss <= 2.0


def test_loss_giou_examples():
    assert float(loss_giou(_t([1, 1, 4, 4]), _t([1, 1, 4, 4]))) == 0.0
    assert float(loss_giou(_t([0, 0, 10, 10]), _t([20, 0, 30, 10]))) == pytest.approx(4 / 3, abs=1e-12)
    assert float(loss_giou(torch.zeros(0, 4, dtype=D), torch.zeros(0, 4, dtype=D))) == 0.0


def test_loss_conf_perfect_is_zero():
    target = torch.tensor([1.0, 0.0, 0.0], dtype=D)
    logits = torch.tensor([1e3, -1e3, -1e3], dtype=D)
    obj = target.bool()
    assert float(loss_conf(logits, target, obj)) == 0.0


def test_loss_conf_focal_hand_value():
    got = float(loss_conf(torch.zeros(1, dtype=D), torch.ones(1, dtype=D), torch.ones(1, dtype=torch.bool),
                          LossConfig(alpha=0.5, gamma=2.0)))
    assert got == pytest.approx(1.0 * 0.5 * 0.25 * -math.log(0.5), abs=1e-12)
    assert got == pytest.approx(0.0866, abs=1e-4)


def test_loss_conf_no_object_weighting():
    cfg = LossConfig(alpha=0.25, lambda_noobj=0.5)
    got = float(loss_conf(torch.zeros(1, dtype=D), torch.zeros(1, dtype=D), torch.zeros(1, dtype=torch.bool), cfg))
    assert got == pytest.approx(0.5 * 0.75 * 0.25 * math.log(2), abs=1e-12)


def test_loss_prob_values():
    onehot = torch.tensor([[0.0, 1.0, 0.0]], dtype=D)
    assert float(loss_prob(torch.tensor([[-1e3, 1e3, -1e3]], dtype=D), onehot)) == 0.0
    assert float(loss_prob(torch.zeros(1, 3, dtype=D), onehot)) == pytest.approx(math.log(3), abs=1e-12)
    assert float(loss_prob(torch.zeros(0, 3, dtype=D), torch.zeros(0, 3, dtype=D))) == 0.0


def test_loss_config_validation():
    with pytest.raises(ContractError):
        LossConfig(alpha=1.5)
    with pytest.raises(ContractError):
        LossConfig(lambda1=-1)


def _perfect_raw(targets, big=1e3):
    raw = []
    for s in targets.scales:
        n = s.obj.shape[-1]
        r = torch.zeros(s.obj.shape[0], 24, n, n, dtype=D)
        p = A.split_raw(r)
        p[..., :4] = s.t
        p[..., 4] = torch.where(s.obj, big, -big)
        p[..., 5:] = torch.where(s.classes > 0, big, -big)
        raw.append(r)
    return raw


def _scene_targets(seed=0, n_images=2, input_size=64):
    rng = np.random.default_rng(seed)
    anchors = A.sort_by_area(A.default_anchors(input_size))
    parts = []
    for _ in range(n_images):
        labels = [ChangeBox(*rng.uniform(8, input_size - 8, 2), *rng.uniform(4, 30, 2),
                            list(ChangeCategory)[int(rng.integers(3))]) for _ in range(3)]
        parts.append(build_targets(labels, anchors, input_size))
    return concat_targets(parts), anchors


def test_total_loss_zero_at_perfect_prediction():
    targets, anchors = _scene_targets()
    out = total_loss(_perfect_raw(targets), targets, anchors)
    assert float(out.total) == pytest.approx(0.0, abs=1e-9)


def test_total_loss_is_weighted_sum_and_homogeneous():
    targets, anchors = _scene_targets(1)
    g = torch.Generator().manual_seed(0)
    raw = [torch.randn(2, 24, n, n, generator=g, dtype=D) for n in (2, 4, 8)]
    base = total_loss(raw, targets, anchors)
    assert float(base.total) == pytest.approx(float(base.l_giou + base.l_conf + base.l_prob), rel=1e-12)
    doubled = total_loss(raw, targets, anchors, LossConfig(lambda1=2.0))
    assert float(doubled.total - base.total) == pytest.approx(float(base.l_giou), rel=1e-12)
    assert float(doubled.l_conf) == float(base.l_conf)
    scaled = total_loss(raw, targets, anchors, LossConfig(lambda1=3.0, lambda2=3.0, lambda3=3.0))
    assert float(scaled.total) == pytest.approx(3 * float(base.total), rel=1e-12)
    assert all(float(v) >= 0 for v in (base.l_giou, base.l_conf, base.l_prob))
