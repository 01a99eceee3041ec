"""Shared binary-mask helpers: contours, distance bands, label resizing.

A contour pixel is a foreground pixel with at least one in-grid
4-neighbor that is background; both ground-truth derivation and the
boundary metric use this single definition.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage


def contour_mask(mask):
    """1-px contour: fg pixels 4-adjacent to an in-grid bg pixel."""
    fg = mask.astype(bool)
    bg_adj = np.zeros_like(fg)
    bg_adj[1:, :] |= ~fg[:-1, :]
    bg_adj[:-1, :] |= ~fg[1:, :]
    bg_adj[:, 1:] |= ~fg[:, :-1]
    bg_adj[:, :-1] |= ~fg[:, 1:]
    return fg & bg_adj


def chebyshev_band(seed_mask, radius):
    """All pixels within Chebyshev distance ``radius`` of ``seed_mask``.

    Square-structuring-element dilation, so radius r == r iterations
    of 3x3 dilation.
    """
    seed = seed_mask.astype(bool)
    if radius <= 0 or not seed.any():
        return seed
    struct = np.ones((3, 3), dtype=bool)
    return ndimage.binary_dilation(seed, structure=struct, iterations=radius)


def nearest_downsample(labels, out_h, out_w):
    """Nearest-neighbor label resize (no label mixing by construction)."""
    h, w = labels.shape[-2:]
    ri = np.minimum((np.arange(out_h) + 0.5) * h / out_h, h - 1).astype(np.int64)
    ci = np.minimum((np.arange(out_w) + 0.5) * w / out_w, w - 1).astype(np.int64)
    return labels[..., ri[:, None], ci[None, :]]


def majority_downsample(mask, out_h, out_w):
    """Binary mask resize: output cell is 1 iff at least half of its
    footprint is.  Requires integer stride ratios; unlike point
    sampling, the result is consistent with cell-level evidence, which
    keeps coarse supervision learnable."""
    h, w = mask.shape[-2:]
    if h % out_h or w % out_w:
        raise ValueError(f"{h}x{w} not an integer multiple of {out_h}x{out_w}")
    fy, fx = h // out_h, w // out_w
    blocks = mask.reshape(*mask.shape[:-2], out_h, fy, out_w, fx)
    frac = blocks.mean(axis=(-3, -1), dtype=np.float64)
    return (frac >= 0.5).astype(mask.dtype)
