"""Five-level pyramid, shared anchor-free heads, losses, decoding, AP/AR.

Detection follows the FCOS recipe: every pyramid location predicts per-class
probabilities, four positive distances to the box sides, and a centerness
score. Targets assign each location to at most one box (smallest area wins)
within its level's distance range. The loss is focal classification plus
IoU-log regression plus centerness BCE, each normalized by the positive count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backbone import Backbone, _Downsample
from .blocks import _conv_init
from .module import Module
from .nnops import (conv2d, nearest_upsample2d, scalar_scale,
                    slice_channels)
from .tensor import ShapeError, Tensor, minimum

STRIDES = (4, 8, 16, 32, 64)
BASE_RANGES = ((0.0, 64.0), (64.0, 128.0), (128.0, 256.0),
               (256.0, 512.0), (512.0, float("inf")))
FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_EPS = 1e-7
MAX_DETECTIONS = 100


# ---------------------------------------------------------------------------
# boxes


@dataclass
class BBox:
    """Axis-aligned box in image pixels; positive area enforced."""

    x1: float
    y1: float
    x2: float
    y2: float
    class_id: int = 1
    score: float = 1.0

    def __post_init__(self):
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def box_iou(a: BBox, b: BBox) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------------------
# model


class FPN(Module):
    """Lateral 1x1 projections, top-down nearest-add, 3x3 smoothing, and a
    stride-2 extension producing the fifth level."""

    def __init__(self, stage_widths, width: int, rng: np.random.Generator):
        self.width = width
        for i, c in enumerate(stage_widths):
            self.register(f"lateral{i}", _Conv1x1(c, width, rng))
            self.register(f"smooth{i}", _Conv3x3(width, width, rng))
        self.extra = _Downsample(width, width, rng)

    def __call__(self, feats: list[Tensor]) -> list[Tensor]:
        if len(feats) != 4:
            raise ShapeError(f"pyramid expects 4 stage maps, got {len(feats)}")
        laterals = [getattr(self, f"lateral{i}")(f) for i, f in enumerate(feats)]
        merged = [None] * 4
        merged[3] = laterals[3]
        for i in (2, 1, 0):
            merged[i] = laterals[i] + nearest_upsample2d(merged[i + 1], 2)
        levels = [getattr(self, f"smooth{i}")(m) for i, m in enumerate(merged)]
        levels.append(self.extra(levels[3]))
        return levels


class _Conv1x1(Module):
    def __init__(self, in_c, out_c, rng):
        self.w = Tensor(_conv_init(rng, out_c, in_c, 1), requires_grad=True)
        self.b = Tensor(np.zeros(out_c), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.w, self.b)


class _Conv3x3(Module):
    def __init__(self, in_c, out_c, rng, bias_fill: float = 0.0):
        self.w = Tensor(_conv_init(rng, out_c, in_c, 3), requires_grad=True)
        self.b = Tensor(np.full(out_c, bias_fill, dtype=np.float64), requires_grad=True)

    def __call__(self, x):
        return conv2d(x, self.w, self.b, padding=1)


class DetectionHead(Module):
    """Two 3x3 conv towers shared across all levels.

    Classification logits come off the class tower; box distances and
    centerness come off the regression tower. Each level owns one learnable
    scale on the raw distance outputs. Class bias starts at -log(99) so the
    initial foreground probability is about 0.01.
    """

    def __init__(self, width: int, num_classes: int, n_levels: int,
                 rng: np.random.Generator):
        self.num_classes = num_classes
        for t in range(2):
            self.register(f"cls_tower{t}", _Conv3x3(width, width, rng))
            self.register(f"reg_tower{t}", _Conv3x3(width, width, rng))
        self.cls_out = _Conv3x3(width, num_classes, rng,
                                bias_fill=-float(np.log(99.0)))
        self.reg_out = _Conv3x3(width, 4, rng)
        self.ctr_out = _Conv3x3(width, 1, rng)
        self.scales = [Tensor(np.ones(()), requires_grad=True)
                       for _ in range(n_levels)]

    def extra_parameter_groups(self):
        return (("scales", {str(i): s for i, s in enumerate(self.scales)}),)

    def __call__(self, level_feats: list[Tensor]) -> list[dict]:
        outputs = []
        for i, f in enumerate(level_feats):
            c = f
            r = f
            for t in range(2):
                c = getattr(self, f"cls_tower{t}")(c).relu()
                r = getattr(self, f"reg_tower{t}")(r).relu()
            raw = scalar_scale(self.reg_out(r), self.scales[i]).clip(-12.0, 12.0)
            outputs.append({
                "cls": self.cls_out(c),
                "dist": raw.exp() * float(STRIDES[i]),
                "ctr": self.ctr_out(r),
            })
        return outputs


class Detector(Module):
    """Backbone + pyramid + shared heads; forward returns per-level outputs."""

    def __init__(self, cfg, rng: np.random.Generator):
        self.cfg = cfg
        self.backbone = Backbone(cfg, rng)
        self.fpn = FPN(cfg.widths, cfg.fpn_width, rng)
        self.head = DetectionHead(cfg.fpn_width, cfg.num_classes, len(STRIDES), rng)
        self.geometry = LevelGeometry(cfg.image_size)

    def __call__(self, image: Tensor) -> list[dict]:
        return self.head(self.fpn(self.backbone(image)))


# ---------------------------------------------------------------------------
# target assignment


@dataclass
class LevelGeometry:
    """Location centers and regression ranges for every pyramid level."""

    image_size: int
    strides: tuple = STRIDES
    ranges: list = field(default_factory=list)

    def __post_init__(self):
        scale = min(1.0, self.image_size / 512.0)
        self.ranges = [(lo * scale, hi * scale) for lo, hi in BASE_RANGES]

    def level_shape(self, level: int) -> tuple[int, int]:
        side = self.image_size // self.strides[level]
        return max(side, 1), max(side, 1)

    def centers(self, level: int) -> tuple[np.ndarray, np.ndarray]:
        H, W = self.level_shape(level)
        s = self.strides[level]
        ys = (np.arange(H) + 0.5) * s
        xs = (np.arange(W) + 0.5) * s
        return ys, xs


@dataclass
class LevelTargets:
    cls: np.ndarray   # (B, num_classes, H, W) one-hot
    reg: np.ndarray   # (B, 4, H, W) distances l, t, r, b
    ctr: np.ndarray   # (B, 1, H, W)
    pos: np.ndarray   # (B, 1, H, W) indicator


def assign_targets(boxes_per_image: list[list[BBox]], geometry: LevelGeometry,
                   num_classes: int) -> tuple[list[LevelTargets], int]:
    """FCOS-style assignment; returns per-level targets and total positives.

    A location is positive for a box when it lies strictly inside it and the
    largest of its four side distances falls inside the level's range; among
    competing boxes the smallest area wins. Centerness is
    sqrt((min(l,r)/max(l,r)) * (min(t,b)/max(t,b))).
    """
    B = len(boxes_per_image)
    out = []
    n_pos = 0
    for level in range(len(geometry.strides)):
        H, W = geometry.level_shape(level)
        ys, xs = geometry.centers(level)
        lo, hi = geometry.ranges[level]
        cls_t = np.zeros((B, num_classes, H, W))
        reg_t = np.zeros((B, 4, H, W))
        ctr_t = np.zeros((B, 1, H, W))
        pos_t = np.zeros((B, 1, H, W))
        for b, boxes in enumerate(boxes_per_image):
            best_area = np.full((H, W), np.inf)
            for box in boxes:
                left = xs[None, :] - box.x1
                top = ys[:, None] - box.y1
                right = box.x2 - xs[None, :]
                bottom = box.y2 - ys[:, None]
                l = np.broadcast_to(left, (H, W))
                t = np.broadcast_to(top, (H, W))
                r = np.broadcast_to(right, (H, W))
                bt = np.broadcast_to(bottom, (H, W))
                dists = np.stack([l, t, r, bt])
                inside = dists.min(axis=0) > 0
                dmax = dists.max(axis=0)
                ok = inside & (dmax > lo) & (dmax <= hi) & (box.area < best_area)
                if not ok.any():
                    continue
                best_area = np.where(ok, box.area, best_area)
                if not 1 <= box.class_id <= num_classes:
                    raise ValueError(
                        f"box class {box.class_id} outside 1..{num_classes}"
                    )
                cls_t[b, :, ok] = 0.0
                cls_t[b, box.class_id - 1, ok] = 1.0
                reg_t[b, :, ok] = dists[:, ok].T
                lr = np.stack([l[ok], r[ok]])
                tb = np.stack([t[ok], bt[ok]])
                ctr = np.sqrt((lr.min(0) / lr.max(0)) * (tb.min(0) / tb.max(0)))
                ctr_t[b, 0, ok] = ctr
                pos_t[b, 0, ok] = 1.0
            n_pos += int(pos_t[b].sum())
        out.append(LevelTargets(cls=cls_t, reg=reg_t, ctr=ctr_t, pos=pos_t))
    return out, n_pos


def centerness_target(l: float, t: float, r: float, b: float) -> float:
    """Centerness of one positive location from its four side distances."""
    if min(l, t, r, b) <= 0:
        raise ValueError("centerness is defined for strictly positive distances")
    return float(np.sqrt((min(l, r) / max(l, r)) * (min(t, b) / max(t, b))))


# ---------------------------------------------------------------------------
# losses


def focal_loss(probs: Tensor, targets: np.ndarray,
               alpha: float = FOCAL_ALPHA, gamma: float = FOCAL_GAMMA) -> Tensor:
    """Summed binary focal loss; probs are post-sigmoid, targets one-hot."""
    if probs.data.shape != targets.shape:
        raise ShapeError(f"probs {probs.shape} vs targets {targets.shape}")
    p = probs.clip(PROB_EPS, 1.0 - PROB_EPS)
    t = Tensor(targets)
    pos = t * ((1.0 - p) ** gamma) * p.log() * alpha
    neg = (1.0 - t) * (p ** gamma) * (1.0 - p).log() * (1.0 - alpha)
    return -(pos + neg).sum()


def iou_loss(pred_dist: Tensor, target_dist: np.ndarray,
             pos_mask: np.ndarray) -> Tensor:
    """Summed -log(IoU) over positive locations (UnitBox form).

    pred_dist and target_dist are (B, 4, H, W) side distances l, t, r, b.
    """
    if pred_dist.data.shape != target_dist.shape:
        raise ShapeError(f"pred {pred_dist.shape} vs target {target_dist.shape}")
    tg = Tensor(target_dist)
    pl, pt = slice_channels(pred_dist, 0, 1), slice_channels(pred_dist, 1, 2)
    pr, pb = slice_channels(pred_dist, 2, 3), slice_channels(pred_dist, 3, 4)
    tl, tt = slice_channels(tg, 0, 1), slice_channels(tg, 1, 2)
    tr, tb = slice_channels(tg, 2, 3), slice_channels(tg, 3, 4)
    inter_w = minimum(pl, tl) + minimum(pr, tr)
    inter_h = minimum(pt, tt) + minimum(pb, tb)
    inter = inter_w * inter_h
    union = (pl + pr) * (pt + pb) + (tl + tr) * (tt + tb) - inter
    iou = inter / union
    per_loc = -(iou.clip(PROB_EPS, 1.0).log())
    return (per_loc * Tensor(pos_mask)).sum()


def centerness_loss(ctr_probs: Tensor, targets: np.ndarray,
                    pos_mask: np.ndarray) -> Tensor:
    """Summed binary cross-entropy over positive locations."""
    p = ctr_probs.clip(PROB_EPS, 1.0 - PROB_EPS)
    t = Tensor(targets)
    bce = -(t * p.log() + (1.0 - t) * (1.0 - p).log())
    return (bce * Tensor(pos_mask)).sum()


@dataclass
class LossBreakdown:
    cls: Tensor
    reg: Tensor
    ctr: Tensor
    total: Tensor
    n_pos: int

    def scalars(self) -> dict:
        return {"cls": self.cls.item(), "reg": self.reg.item(),
                "ctr": self.ctr.item(), "total": self.total.item(),
                "n_pos": self.n_pos}


def total_loss(outputs: list[dict], targets: list[LevelTargets], n_pos: int,
               reg_weight: float = 1.0, ctr_weight: float = 1.0) -> LossBreakdown:
    """Three-term detection loss, each term normalized by max(n_pos, 1)."""
    if len(outputs) != len(targets):
        raise ShapeError(f"{len(outputs)} output levels vs {len(targets)} target levels")
    denom = 1.0 / max(n_pos, 1)
    cls_sum = reg_sum = ctr_sum = None
    for out, tgt in zip(outputs, targets):
        c = focal_loss(out["cls"].sigmoid(), tgt.cls)
        r = iou_loss(out["dist"], tgt.reg, tgt.pos)
        o = centerness_loss(out["ctr"].sigmoid(), tgt.ctr, tgt.pos)
        cls_sum = c if cls_sum is None else cls_sum + c
        reg_sum = r if reg_sum is None else reg_sum + r
        ctr_sum = o if ctr_sum is None else ctr_sum + o
    cls_n = cls_sum * denom
    reg_n = reg_sum * denom
    ctr_n = ctr_sum * denom
    total = cls_n + reg_weight * reg_n + ctr_weight * ctr_n
    return LossBreakdown(cls=cls_n, reg=reg_n, ctr=ctr_n, total=total, n_pos=n_pos)


# ---------------------------------------------------------------------------
# decoding and evaluation


def nms(boxes: list[BBox], iou_thresh: float) -> list[BBox]:
    """Greedy class-agnostic suppression; call per class for class-wise NMS."""
    order = sorted(boxes, key=lambda b: -b.score)
    kept: list[BBox] = []
    for cand in order:
        if all(box_iou(cand, k) <= iou_thresh for k in kept):
            kept.append(cand)
    return kept


def decode_detections(outputs: list[dict], geometry: LevelGeometry,
                      score_thresh: float = 0.05, nms_iou: float = 0.5,
                      max_dets: int = MAX_DETECTIONS) -> list[list[BBox]]:
    """Turn per-level head outputs into per-image box lists.

    Scores rank by class probability times centerness probability; class-wise
    greedy NMS; at most max_dets boxes per image.
    """
    B = outputs[0]["cls"].data.shape[0]
    size = float(geometry.image_size)
    per_image: list[list[BBox]] = [[] for _ in range(B)]
    for level, out in enumerate(outputs):
        cls_p = _np_sigmoid(out["cls"].data)
        ctr_p = _np_sigmoid(out["ctr"].data)
        dist = out["dist"].data
        ys, xs = geometry.centers(level)
        score = cls_p * ctr_p  # (B, C, H, W)
        for b in range(B):
            cids, iy, ix = np.nonzero(score[b] > score_thresh)
            for c, i, j in zip(cids, iy, ix):
                l, t, r, bt = dist[b, :, i, j]
                cx, cy = xs[j], ys[i]
                x1, y1 = max(0.0, cx - l), max(0.0, cy - t)
                x2, y2 = min(size, cx + r), min(size, cy + bt)
                if x2 <= x1 or y2 <= y1:
                    continue
                per_image[b].append(BBox(x1, y1, x2, y2, class_id=int(c) + 1,
                                         score=float(score[b, c, i, j])))
    results = []
    for boxes in per_image:
        kept: list[BBox] = []
        for cid in sorted({b.class_id for b in boxes}):
            kept.extend(nms([b for b in boxes if b.class_id == cid], nms_iou))
        kept.sort(key=lambda b: -b.score)
        results.append(kept[:max_dets])
    return results


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _average_precision(match_flags: np.ndarray, n_gt: int) -> float:
    """All-point interpolated AP from score-sorted TP/FP flags."""
    if n_gt == 0:
        return 1.0 if match_flags.size == 0 else 0.0
    if match_flags.size == 0:
        return 0.0
    tp = np.cumsum(match_flags)
    fp = np.cumsum(1 - match_flags)
    recall = tp / n_gt
    precision = tp / np.maximum(tp + fp, 1)
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(((mrec[steps] - mrec[steps - 1]) * mpre[steps]).sum())


def evaluate_detections(predictions: list[list[BBox]], ground_truth: list[list[BBox]],
                        thresholds=(0.5, 0.6, 0.7),
                        max_dets: int = MAX_DETECTIONS) -> dict:
    """AP/AR per IoU threshold plus their means.

    Matching is greedy by descending score against the highest-IoU unmatched
    ground-truth box of the same class in the same image. AR caps detections
    at max_dets per image. A class absent from both predictions and ground
    truth counts as AP = AR = 1.
    """
    if len(predictions) != len(ground_truth):
        raise ValueError("prediction and ground-truth image counts differ")
    preds = [sorted(p, key=lambda b: -b.score)[:max_dets] for p in predictions]
    classes = sorted({b.class_id for gl in ground_truth for b in gl} |
                     {b.class_id for pl in preds for b in pl})
    if not classes:
        classes = [1]
    result = {}
    ap_means, ar_means = [], []
    for thr in thresholds:
        aps, ars = [], []
        for cid in classes:
            flat = []
            for img, plist in enumerate(preds):
                for b in plist:
                    if b.class_id == cid:
                        flat.append((b.score, img, b))
            flat.sort(key=lambda x: -x[0])
            gt_by_img = [[b for b in gl if b.class_id == cid] for gl in ground_truth]
            n_gt = sum(len(g) for g in gt_by_img)
            used = [set() for _ in ground_truth]
            flags = np.zeros(len(flat), dtype=np.int64)
            matched = 0
            for k, (_, img, pb) in enumerate(flat):
                best_iou, best_j = 0.0, -1
                for j, gb in enumerate(gt_by_img[img]):
                    if j in used[img]:
                        continue
                    iou = box_iou(pb, gb)
                    if iou > best_iou:
                        best_iou, best_j = iou, j
                if best_j >= 0 and best_iou >= thr:
                    used[img].add(best_j)
                    flags[k] = 1
                    matched += 1
            aps.append(_average_precision(flags, n_gt))
            if n_gt == 0:
                ars.append(1.0 if len(flat) == 0 else 0.0)
            else:
                ars.append(matched / n_gt)
        key = str(int(round(thr * 100)))
        result[f"AP{key}"] = float(np.mean(aps))
        result[f"AR{key}"] = float(np.mean(ars))
        ap_means.append(result[f"AP{key}"])
        ar_means.append(result[f"AR{key}"])
    result["mAP"] = float(np.mean(ap_means))
    result["mAR"] = float(np.mean(ar_means))
    return result


def detections_to_records(per_image: list[list[BBox]]) -> list[str]:
    """Line-delimited records: image_id,class,x1,y1,x2,y2,score."""
    lines = []
    for img, boxes in enumerate(per_image):
        for b in boxes:
            lines.append(f"{img},{b.class_id},{b.x1:.3f},{b.y1:.3f},"
                         f"{b.x2:.3f},{b.y2:.3f},{b.score:.6f}")
    return lines
