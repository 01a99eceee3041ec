"""Segmentation evaluation: IoU/mIoU, ACC, mAE, BER, F-beta, boundary F1.

Region metrics come from pixel-exact confusion counts.  The boundary
score matches 1-px contours of prediction and ground truth within a
pixel-distance threshold using an exact Euclidean distance transform;
precision is the fraction of predicted contour pixels within the
threshold of the ground-truth contour, recall the symmetric quantity,
and F1 their harmonic mean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .maskops import contour_mask

BOUNDARY_THRESHOLDS = (3, 5, 9, 12)

F_BETA_SQ = 0.3  # saliency-detection convention


@dataclass
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class MetricsReport:
    iou_fg: float
    iou_bg: float
    miou: float
    acc: float
    mae: float
    ber: float
    f_beta: float
    boundary_f1: dict = field(default_factory=dict)  # threshold px -> score


def confusion(pred, gt, ignore=None):
    """Pixel-exact counts; ``ignore`` pixels are excluded entirely."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    valid = np.ones_like(p) if ignore is None else ~ignore.astype(bool)
    tp = int(np.count_nonzero(p & g & valid))
    fp = int(np.count_nonzero(p & ~g & valid))
    fn = int(np.count_nonzero(~p & g & valid))
    tn = int(np.count_nonzero(~p & ~g & valid))
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def iou(c):
    """(fg IoU, bg IoU, mIoU); a class with empty union is excluded."""
    vals = []
    fg = bg = float("nan")
    if c.tp + c.fp + c.fn > 0:
        fg = c.tp / (c.tp + c.fp + c.fn)
        vals.append(fg)
    if c.tn + c.fp + c.fn > 0:
        bg = c.tn / (c.tn + c.fp + c.fn)
        vals.append(bg)
    if not vals:
        raise ValueError("IoU undefined: both class unions are empty")
    return fg, bg, float(np.mean(vals))


def accuracy(c):
    return (c.tp + c.tn) / c.total if c.total else 0.0


def mae(pred_prob, gt):
    """Mean absolute error between a [0,1] map and a binary map."""
    return float(np.abs(pred_prob.astype(np.float64) - gt.astype(np.float64)).mean())


def ber(c):
    """Balance error rate in [0,100]; needs both classes in the gt."""
    pos = c.tp + c.fn
    neg = c.tn + c.fp
    if pos == 0 or neg == 0:
        raise ValueError("BER undefined: ground truth has a single class")
    return 100.0 * (1.0 - 0.5 * (c.tp / pos + c.tn / neg))


def f_beta(c, beta2=F_BETA_SQ):
    if c.tp + c.fp == 0 or c.tp + c.fn == 0:
        return 0.0
    p = c.tp / (c.tp + c.fp)
    r = c.tp / (c.tp + c.fn)
    if p == 0 and r == 0:
        return 0.0
    return (1.0 + beta2) * p * r / (beta2 * p + r)


def boundary_f1(pred, gt, t_px):
    if t_px < 1:
        raise ValueError(f"threshold must be >= 1 px, got {t_px}")
    pc = contour_mask(pred)
    gc = contour_mask(gt)
    if not pc.any() and not gc.any():
        return 1.0
    if not pc.any() or not gc.any():
        return 0.0
    # distance_transform_edt gives each pixel's distance to the nearest
    # zero, so pass the complement of the contour.
    dist_to_gt = ndimage.distance_transform_edt(~gc)
    dist_to_pred = ndimage.distance_transform_edt(~pc)
    precision = float(np.mean(dist_to_gt[pc] <= t_px))
    recall = float(np.mean(dist_to_pred[gc] <= t_px))
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def evaluate_pair(pred_mask, prob_fg, gt_mask,
                  thresholds=BOUNDARY_THRESHOLDS):
    """All metrics for one image.  BER is NaN when the gt has one class."""
    c = confusion(pred_mask, gt_mask)
    fg, bg, m = iou(c)
    try:
        b = ber(c)
    except ValueError:
        b = float("nan")
    return MetricsReport(
        iou_fg=fg, iou_bg=bg, miou=m, acc=accuracy(c),
        mae=mae(prob_fg, gt_mask), ber=b, f_beta=f_beta(c),
        boundary_f1={t: boundary_f1(pred_mask, gt_mask, t) for t in thresholds},
    )


def summarize(reports, thresholds=BOUNDARY_THRESHOLDS):
    """Dataset summary: means over images whose gt has both classes.

    Images with a single-class ground truth contribute no BER and are
    excluded from every averaged column so the columns stay comparable.
    """
    valid = [r for r in reports if np.isfinite(r.ber)]
    if not valid:
        raise ValueError("no image with both classes present")
    return MetricsReport(
        iou_fg=float(np.mean([r.iou_fg for r in valid])),
        iou_bg=float(np.mean([r.iou_bg for r in valid])),
        miou=float(np.mean([r.miou for r in valid])),
        acc=float(np.mean([r.acc for r in valid])),
        mae=float(np.mean([r.mae for r in valid])),
        ber=float(np.mean([r.ber for r in valid])),
        f_beta=float(np.mean([r.f_beta for r in valid])),
        boundary_f1={t: float(np.mean([r.boundary_f1[t] for r in valid]))
                     for t in thresholds},
    )


def confusion_sum(counts):
    """Order-independent dataset-level counts."""
    return ConfusionCounts(
        tp=sum(c.tp for c in counts), fp=sum(c.fp for c in counts),
        tn=sum(c.tn for c in counts), fn=sum(c.fn for c in counts))
