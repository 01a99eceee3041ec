"""Refined differential block: edge feature from low-level fusion,
residual by subtraction, refined residual, and their merge.

Dataflow (all convs 3x3, channel width C unless noted):

    f_edge         = fuse(concat(resize(f_low), f_in))
    f_b            = sigmoid(edge_head(f_edge))          # 1 channel
    f_residual     = f_in - f_edge
    f_residual_ref = refine(concat(f_residual, resize(f_high)))
    f_r            = residual_head(f_residual_ref)       # 2 channels
    f_merge        = f_residual_ref + f_edge             # single add

The merge is computed as one addition so that
f_merge - f_edge == f_residual_ref holds exactly in floating point.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nn import Conv2d, Module
from .tensor import (ShapeError, Tensor, add, bilinear_resize,
                     concat_channels, relu, sigmoid, sub)


@dataclass
class RdmOut:
    f_edge: Tensor
    f_b: Tensor
    f_residual: Tensor
    f_residual_ref: Tensor
    f_r: Tensor
    f_merge: Tensor


class Rdm(Module):
    def __init__(self, channels, low_channels, high_channels, rng,
                 fuse_relu=True):
        super().__init__()
        self.channels = channels
        self.low_channels = low_channels
        self.high_channels = high_channels
        self.fuse_relu = fuse_relu
        mid = max(channels // 2, 1)
        self.edge_fuse = Conv2d(low_channels + channels, channels, 3, rng)
        self.edge_head1 = Conv2d(channels, mid, 3, rng)
        self.edge_head2 = Conv2d(mid, 1, 3, rng, zero_init=True)
        self.refine_fuse = Conv2d(channels + high_channels, channels, 3, rng)
        self.res_head1 = Conv2d(channels, mid, 3, rng)
        self.res_head2 = Conv2d(mid, 2, 3, rng, zero_init=True)

    def forward(self, f_in, f_low, f_high):
        c = self.channels
        if f_in.shape[1] != c:
            raise ShapeError(
                f"edge fusion: f_in has {f_in.shape[1]} channels, expected {c}")
        if f_low.shape[1] != self.low_channels:
            raise ShapeError(
                f"edge fusion: f_low has {f_low.shape[1]} channels, "
                f"expected {self.low_channels}")
        if f_high.shape[1] != self.high_channels:
            raise ShapeError(
                f"residual refinement: f_high has {f_high.shape[1]} channels, "
                f"expected {self.high_channels}")
        h, w = f_in.shape[2:]

        low = bilinear_resize(f_low, h, w)
        f_edge = self.edge_fuse(concat_channels(low, f_in))
        if self.fuse_relu:
            f_edge = relu(f_edge)
        f_b = sigmoid(self.edge_head2(relu(self.edge_head1(f_edge))))

        f_residual = sub(f_in, f_edge)
        high = bilinear_resize(f_high, h, w)
        f_residual_ref = self.refine_fuse(concat_channels(f_residual, high))
        if self.fuse_relu:
            f_residual_ref = relu(f_residual_ref)
        f_r = self.res_head2(relu(self.res_head1(f_residual_ref)))

        f_merge = add(f_residual_ref, f_edge)
        return RdmOut(f_edge=f_edge, f_b=f_b, f_residual=f_residual,
                      f_residual_ref=f_residual_ref, f_r=f_r, f_merge=f_merge)


def pca_project(features, dims=3):
    """Project per-pixel features onto their top principal directions.

    features: Tensor or ndarray (C,h,w) with C >= dims.  Pixels are
    centered, projected onto the leading eigenvectors of the C x C
    pixel covariance, and each output channel is min-max normalized to
    [0,1].  Directions with (near) zero variance come out as zeros.
    """
    f = features.data if isinstance(features, Tensor) else np.asarray(features)
    if f.ndim != 3:
        raise ShapeError(f"pca_project expects (C,h,w), got {f.shape}")
    c, h, w = f.shape
    if c < dims:
        raise ShapeError(f"need at least {dims} channels, got {c}")

    pts = f.reshape(c, h * w).T.astype(np.float64)
    pts = pts - pts.mean(axis=0)
    cov = pts.T @ pts / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:dims]
    tol = max(evals.max(), 0.0) * 1e-9 + 1e-30
    if np.count_nonzero(evals > tol) < dims:
        warnings.warn("rank-deficient feature covariance; padding "
                      "missing principal directions with zeros")
    out = np.zeros((dims, h, w), dtype=np.float64)
    for k, idx in enumerate(order):
        if evals[idx] <= tol:
            continue
        proj = (pts @ evecs[:, idx]).reshape(h, w)
        lo, hi = proj.min(), proj.max()
        if hi > lo:
            out[k] = (proj - lo) / (hi - lo)
    return out.astype(np.float32)
