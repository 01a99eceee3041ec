"""Supervision terms: cross-entropy with ignore, Dice, and the
stage-summed weighted combination.

Both losses are fused tape ops with analytic gradients (verified by
finite differences in the test suite).  Cross-entropy averages over
non-ignored pixels of the whole batch map so stage losses stay
comparable across stage resolutions; ignored pixels receive exactly
zero gradient.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maskops import majority_downsample, nearest_downsample
from .synth import IGNORE
from .tensor import ShapeError, _make, add, bilinear_resize, scale

DICE_SMOOTH = 1.0


@dataclass
class LossWeights:
    residual: float = 1.0
    edge: float = 3.0
    merge: float = 1.0

    def __post_init__(self):
        if min(self.residual, self.edge, self.merge) <= 0:
            raise ValueError("loss weights must be positive")


@dataclass
class GroundTruthBundle:
    """Batched ground truths at full resolution, (N,H,W) uint8 each."""
    g_m: np.ndarray
    g_e: np.ndarray
    g_r: np.ndarray

    @classmethod
    def from_samples(cls, samples):
        return cls(g_m=np.stack([s.mask_m for s in samples]),
                   g_e=np.stack([s.mask_e for s in samples]),
                   g_r=np.stack([s.mask_r for s in samples]))


def cross_entropy_ignore(logits, target, ignore=IGNORE):
    """Mean 2-class softmax cross-entropy over non-ignored pixels.

    logits: Tensor (N,2,h,w); target: (N,h,w) with labels {0,1,ignore}.
    Returns 0 with zero gradient when every pixel is ignored.
    """
    if logits.ndim != 4 or logits.shape[1] != 2:
        raise ShapeError(f"cross_entropy_ignore: logits must be (N,2,h,w), got {logits.shape}")
    if target.shape != (logits.shape[0],) + logits.shape[2:]:
        raise ShapeError(
            f"cross_entropy_ignore: target {target.shape} does not match logits {logits.shape}")
    bad = ~np.isin(target, (0, 1, ignore))
    if bad.any():
        raise ValueError(f"target contains labels outside {{0,1,{ignore}}}: "
                         f"{np.unique(target[bad])}")
    d = logits.data
    m = d.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(d - m).sum(axis=1, keepdims=True))
    valid = target != ignore
    count = int(valid.sum())
    labels = np.where(valid, target, 0).astype(np.int64)
    picked = np.take_along_axis(d, labels[:, None], axis=1)[:, 0]
    per_px = (lse[:, 0] - picked) * valid
    value = per_px.sum() / count if count else 0.0

    def bwd(g):
        if count == 0:
            return (np.zeros_like(d),)
        soft = np.exp(d - lse)
        onehot = np.zeros_like(d)
        np.put_along_axis(onehot, labels[:, None], 1.0, axis=1)
        dl = (soft - onehot) * valid[:, None] * (float(g) / count)
        return (dl.astype(d.dtype),)

    return _make("cross_entropy_ignore", np.asarray(value, dtype=d.dtype),
                 (logits,), bwd)


def dice_loss(pred, target, smooth=DICE_SMOOTH):
    """1 - (2*sum(p*g)+eps) / (sum(p)+sum(g)+eps) over the whole batch.

    pred: Tensor (N,1,h,w) of probabilities; target: (N,h,w) binary.
    """
    if pred.ndim != 4 or pred.shape[1] != 1:
        raise ShapeError(f"dice_loss: pred must be (N,1,h,w), got {pred.shape}")
    if target.shape != (pred.shape[0],) + pred.shape[2:]:
        raise ShapeError(
            f"dice_loss: target {target.shape} does not match pred {pred.shape}")
    p = pred.data[:, 0]
    g = target.astype(p.dtype)
    num = 2.0 * (p * g).sum() + smooth
    den = p.sum() + g.sum() + smooth
    value = 1.0 - num / den

    def bwd(grad):
        dp = -(2.0 * g * den - num) / (den * den) * float(grad)
        return (dp[:, None].astype(p.dtype),)

    return _make("dice_loss", np.asarray(value, dtype=p.dtype), (pred,), bwd)


def _stage_targets(gt, h, w):
    """Stage-resolution supervision targets.

    The residual labels shrink by nearest sampling (any averaging
    would mix the ignore value into real labels).  The binary edge
    band instead uses majority pooling: a point-sampled band is full
    of cells whose label contradicts most of their footprint, and
    those cells saturate the sigmoid under Dice and freeze training.
    """
    return (majority_downsample(gt.g_e, h, w),
            nearest_downsample(gt.g_r, h, w))


def joint_loss(stage, gt, weights, components=None, edge_at_full_res=False):
    """Weighted sum of the per-stage supervision terms.

    The merge term upsamples the stage logits to the ground-truth
    resolution.  Edge and residual terms are applied at stage
    resolution against nearest-downsampled labels by default;
    ``edge_at_full_res`` instead upsamples those heads to the label
    resolution.  Stages without edge or residual heads (plain-decoder
    ablation) contribute only the merge term.  ``components`` (a list,
    when given) collects the unweighted term values per stage.
    """
    h_full, w_full = gt.g_m.shape[-2:]
    f_m = stage.f_m
    if f_m.shape[2:] != (h_full, w_full):
        f_m = bilinear_resize(f_m, h_full, w_full)
    l_merge = cross_entropy_ignore(f_m, gt.g_m)
    total = scale(l_merge, weights.merge)
    l_edge = l_res = None
    if stage.f_b is not None:
        if edge_at_full_res:
            f_b = bilinear_resize(stage.f_b, h_full, w_full)
            f_r = bilinear_resize(stage.f_r, h_full, w_full)
            g_e, g_r = gt.g_e, gt.g_r
        else:
            f_b, f_r = stage.f_b, stage.f_r
            g_e, g_r = _stage_targets(gt, *stage.f_b.shape[2:])
        l_edge = dice_loss(f_b, g_e)
        l_res = cross_entropy_ignore(f_r, g_r)
        total = add(total, add(scale(l_edge, weights.edge),
                               scale(l_res, weights.residual)))
    if components is not None:
        components.append({
            "edge": float(l_edge.data) if l_edge is not None else float("nan"),
            "residual": float(l_res.data) if l_res is not None else float("nan"),
            "merge": float(l_merge.data),
        })
    return total


def total_loss(stages, gt, weights, components=None, edge_at_full_res=False):
    """Plain sum of the per-stage joint losses, no stage discounting."""
    if not stages:
        raise ValueError("total_loss: empty stage list")
    total = None
    for stage in stages:
        term = joint_loss(stage, gt, weights, components, edge_at_full_res)
        total = term if total is None else add(total, term)
    return total
