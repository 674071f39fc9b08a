"""Reference implementations used only as test oracles.

Each one is written independently of the package code: brute-force loops,
shapely geometry, pixel enumeration, central finite differences.
"""

from __future__ import annotations

import numpy as np
import shapely
import torch
from shapely.geometry import box as sbox


# geometry ---------------------------------------------------------------

def quad_pixel_oracle(corners_uv: np.ndarray, height: int, width: int) -> np.ndarray:
    """Pixels whose centers fall strictly inside the polygon (shapely)."""
    poly = shapely.Polygon(corners_uv)
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    inside = shapely.contains_xy(poly, cols.ravel(), rows.ravel())
    return inside.reshape(height, width)


def quad_boundary_pixels(corners_uv: np.ndarray, height: int, width: int, tol: float = 1e-9) -> np.ndarray:
    """Pixel centers lying (numerically) on the polygon outline."""
    ring = shapely.Polygon(corners_uv).exterior
    cols, rows = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    pts = shapely.points(cols.ravel(), rows.ravel())
    return (shapely.distance(ring, pts) <= tol).reshape(height, width)


def pinhole(point_world, R_wc: np.ndarray, t: np.ndarray, fx, fy, cx, cy):
    p = R_wc.T @ (np.asarray(point_world, float) - t)
    return fx * p[0] / p[2] + cx, fy * p[1] / p[2] + cy, p[2]


def unproject(u, v, depth, R_wc: np.ndarray, t: np.ndarray, fx, fy, cx, cy):
    p = np.array([(u - cx) / fx * depth, (v - cy) / fy * depth, depth])
    return R_wc @ p + t


# boxes ------------------------------------------------------------------

def pixel_giou(a, b) -> float:
    """GIoU of integer-corner boxes by counting unit cells."""
    lo = int(min(a[0], a[1], b[0], b[1]))
    hi = int(max(a[2], a[3], b[2], b[3]))
    xs, ys = np.meshgrid(np.arange(lo, hi) + 0.5, np.arange(lo, hi) + 0.5)

    def inside(r):
        return (xs > r[0]) & (xs < r[2]) & (ys > r[1]) & (ys < r[3])

    ia, ib = inside(a), inside(b)
    inter = np.count_nonzero(ia & ib)
    union = np.count_nonzero(ia | ib)
    hull = inside((min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3])))
    c = np.count_nonzero(hull)
    return inter / union - (c - union) / c


def shapely_iou(a, b) -> float:
    pa, pb = sbox(*a), sbox(*b)
    inter = pa.intersection(pb).area
    union = pa.area + pb.area - inter
    return inter / union if union > 0 else 0.0


def nms_oracle(dets, iou_thresh, mode, score_floor):
    """Sort-everything-every-round suppression, one category at a time."""
    out = []
    for cat in sorted({d.category for d in dets}, key=str):
        pool = [[d.confidence, k, d] for k, d in enumerate(dets) if d.category == cat]
        while pool:
            pool.sort(key=lambda x: (-x[0], x[1]))
            score, _, best = pool.pop(0)
            out.append((best, score))
            nxt = []
            for item in pool:
                o = shapely_iou(best.xyxy, item[2].xyxy)
                if mode == "hard":
                    if o <= iou_thresh:
                        nxt.append(item)
                else:
                    if o >= iou_thresh:
                        item[0] = item[0] * (1.0 - o)
                    if item[0] >= score_floor:
                        nxt.append(item)
            pool = nxt
    return out


def greedy_match_oracle(dets, gts, iou_thresh):
    """Plain O(n^2) greedy matching; returns a TP flag per detection (input order)."""
    order = sorted(range(len(dets)), key=lambda k: -dets[k].confidence)
    used = set()
    tp = [False] * len(dets)
    for k in order:
        best, best_iou = None, -1.0
        for g, gt in enumerate(gts):
            if g in used or gt.category != dets[k].category:
                continue
            o = shapely_iou(dets[k].xyxy, gt.xyxy)
            if o >= iou_thresh and o > best_iou:
                best, best_iou = g, o
        if best is not None:
            used.add(best)
            tp[k] = True
    return tp


def prf_oracle(det_sets, gt_sets, category, iou_thresh):
    tp = fp = n_gt = 0
    for dets, gts in zip(det_sets, gt_sets):
        flags = greedy_match_oracle(dets, gts, iou_thresh)
        for d, f in zip(dets, flags):
            if d.category == category:
                tp += f
                fp += not f
        n_gt += sum(g.category == category for g in gts)
    fn = n_gt - tp
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f


def ap_oracle(det_sets, gt_sets, category, iou_thresh):
    """Re-run matching at every distinct confidence threshold, then integrate
    the interpolated precision over recall."""
    n_gt = sum(g.category == category for gts in gt_sets for g in gts)
    if n_gt == 0:
        return float("nan")
    confs = sorted({d.confidence for dets in det_sets for d in dets if d.category == category}, reverse=True)
    points = []
    for tau in confs:
        kept = [[d for d in dets if d.confidence >= tau] for dets in det_sets]
        tp = fp = 0
        for dets, gts in zip(kept, gt_sets):
            flags = greedy_match_oracle(dets, gts, iou_thresh)
            for d, f in zip(dets, flags):
                if d.category == category:
                    tp += f
                    fp += not f
        points.append((tp / n_gt, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for r, _ in sorted(points):
        if r > prev_r:
            ap += (r - prev_r) * max(p for rr, p in points if rr >= r)
            prev_r = r
    return ap


# gradients ----------------------------------------------------------------

class KinkWatch:
    """Records the sign pattern of every LeakyReLU input in ``module``.

    A central difference whose two probes see different patterns straddles a
    kink, where the function has no derivative to compare against.
    """

    def __init__(self, module: torch.nn.Module):
        self.signs: list[torch.Tensor] = []
        self._handles = [m.register_forward_hook(self._hook) for m in module.modules()
                         if isinstance(m, torch.nn.LeakyReLU)]

    def _hook(self, mod, inputs, output):
        self.signs.append(inputs[0].detach() > 0)

    def snapshot(self) -> list[torch.Tensor]:
        out, self.signs = self.signs, []
        return out

    def close(self) -> None:
        for h in self._handles:
            h.remove()


def fd_coords(fn, x: torch.Tensor, n: int | None = None, eps: float = 1e-6, seed: int = 0,
              watch: KinkWatch | None = None):
    """Central differences of scalar ``fn()`` w.r.t. (a sample of) the entries of ``x``.

    ``x`` is perturbed in place and restored. Returns (numeric, indices); with
    a ``watch``, coordinates whose probes straddle a kink are dropped.
    """
    flat = x.data.view(-1)
    idx = np.arange(flat.numel())
    if n is not None and n < len(idx):
        idx = np.random.default_rng(seed).choice(idx, size=n, replace=False)
    num, kept = [], []
    with torch.no_grad():
        for i in idx:
            old = flat[i].item()
            if watch:
                watch.snapshot()
            flat[i] = old + eps
            up = float(fn())
            up_signs = watch.snapshot() if watch else []
            flat[i] = old - eps
            down = float(fn())
            down_signs = watch.snapshot() if watch else []
            flat[i] = old
            if any(not torch.equal(a, b) for a, b in zip(up_signs, down_signs)):
                continue
            num.append((up - down) / (2 * eps))
            kept.append(i)
    return np.array(num), np.array(kept, dtype=int)


def rel_err(analytic, numeric) -> float:
    a, b = np.asarray(analytic, float).ravel(), np.asarray(numeric, float).ravel()
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / denom)


def grad_check(fn, tensors, n: int | None = 40, eps: float = 1e-6, seed: int = 0,
               module: torch.nn.Module | None = None, stats: dict | None = None) -> float:
    """Worst relative error between autograd and central differences over ``tensors``.

    Passing ``module`` skips coordinates whose probes cross a LeakyReLU kink;
    ``stats`` then receives the checked and skipped counts.
    """
    for t in tensors:
        t.grad = None
    out = fn()
    out.backward()
    watch = KinkWatch(module) if module is not None else None
    worst, checked, sampled = 0.0, 0, 0
    try:
        for k, t in enumerate(tensors):
            analytic = t.grad.detach().view(-1).numpy().copy()
            numeric, idx = fd_coords(fn, t, n, eps, seed + k, watch)
            sampled += min(n, t.numel()) if n is not None else t.numel()
            checked += len(idx)
            if len(idx):
                worst = max(worst, rel_err(analytic[idx], numeric))
    finally:
        if watch:
            watch.close()
    if stats is not None:
        stats.update(checked=checked, skipped=sampled - checked)
    return worst
