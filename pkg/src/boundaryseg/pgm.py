"""Edge-aware point graph convolution.

The K most confident pixels of the edge prediction select node
features out of the merged feature map; one graph convolution mixes
them through a learned dense adjacency; the results are written back
in place.  Index selection is a constant of the forward pass, so no
gradient flows through the top-k itself, only through the gathered
values.

Node features are stored node-major (K x C); the math is the
transpose of the channel-major convention, with identical results.
"""

from __future__ import annotations

import numpy as np

from .nn import Module
from .tensor import ShapeError, Tensor, _make


def sample_topk(f_b, k):
    """Indices of the k most confident pixels per batch element.

    f_b: Tensor or ndarray (N,1,h,w).  Returns int64 (N, min(k, h*w))
    in descending confidence order, ties broken by ascending
    row-major index (stable sort on the negated scores).
    """
    conf = f_b.data if isinstance(f_b, Tensor) else np.asarray(f_b)
    if conf.ndim != 4 or conf.shape[1] != 1:
        raise ShapeError(f"sample_topk: expected (N,1,h,w), got {conf.shape}")
    if k < 1:
        raise ValueError(f"sample_topk: k must be >= 1, got {k}")
    n, _, h, w = conf.shape
    flat = conf.reshape(n, h * w)
    order = np.argsort(-flat, axis=1, kind="stable")
    return order[:, :min(k, h * w)].astype(np.int64)


def _check_indices(indices, n, hw):
    if indices.ndim != 2 or indices.shape[0] != n:
        raise ShapeError(f"indices must be (N,K'), got {indices.shape}")
    if indices.min(initial=0) < 0 or indices.max(initial=-1) >= hw:
        raise IndexError(f"index out of range for {hw} positions")
    for row in indices:
        if len(np.unique(row)) != len(row):
            raise ValueError("duplicate indices in one batch element")


def gather_features(f_merge, indices):
    """Pick node features: (N,C,h,w)[indices] -> (N,K',C).

    The gradient scatters back additively to the sampled positions and
    is zero elsewhere.
    """
    n, c, h, w = f_merge.shape
    _check_indices(indices, n, h * w)
    flat = f_merge.data.reshape(n, c, h * w)
    idx = indices[:, None, :]
    out = np.take_along_axis(flat, idx, axis=2).transpose(0, 2, 1)

    def bwd(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, idx, g.transpose(0, 2, 1), axis=2)
        return (dflat.reshape(n, c, h, w),)

    return _make("gather_features", np.ascontiguousarray(out), (f_merge,), bwd)


def scatter_back(f_merge, g_out, indices):
    """Write node features back at their positions; everything else is
    carried over bit-exactly from f_merge."""
    n, c, h, w = f_merge.shape
    _check_indices(indices, n, h * w)
    if g_out.shape != (n, indices.shape[1], c):
        raise ShapeError(
            f"scatter_back: node features {g_out.shape} do not match "
            f"indices {indices.shape} over {c} channels")
    idx = indices[:, None, :]
    out = f_merge.data.copy().reshape(n, c, h * w)
    np.put_along_axis(out, idx, g_out.data.transpose(0, 2, 1), axis=2)

    def bwd(g):
        gflat = g.reshape(n, c, h * w)
        d_nodes = np.take_along_axis(gflat, idx, axis=2).transpose(0, 2, 1)
        d_base = gflat.copy()
        np.put_along_axis(d_base, idx, 0.0, axis=2)
        return d_base.reshape(n, c, h, w), np.ascontiguousarray(d_nodes)

    return _make("scatter_back", out.reshape(n, c, h, w), (f_merge, g_out), bwd)


def graph_conv(g_in, w_g, a_g, laplacian_variant=False, activation="relu"):
    """One graph convolution over node features.

    g_in: Tensor (N,K',C) or (K',C); w_g: (C,C); a_g: (K,K) with
    K >= K' (only the top-left K'xK' block participates).  Computes
    act(W . G^T . A)^T in node-major storage; ``laplacian_variant``
    replaces A by (I - A).  ``activation`` is "relu" or "identity"
    (test hook).
    """
    squeeze = g_in.ndim == 2
    gd = g_in.data[None] if squeeze else g_in.data
    if gd.ndim != 3:
        raise ShapeError(f"graph_conv: node features must be (N,K',C), got {g_in.shape}")
    n, kp, c = gd.shape
    if w_g.shape != (c, c):
        raise ShapeError(f"graph_conv: weight {w_g.shape} != ({c},{c})")
    if a_g.ndim != 2 or a_g.shape[0] < kp or a_g.shape[1] < kp:
        raise ShapeError(
            f"graph_conv: adjacency {a_g.shape} smaller than {kp} nodes")
    if activation not in ("relu", "identity"):
        raise ValueError(f"unknown activation {activation!r}")

    a_sub = a_g.data[:kp, :kp]
    a_eff = np.eye(kp, dtype=a_sub.dtype) - a_sub if laplacian_variant else a_sub
    z = np.einsum("lk,nlc,dc->nkd", a_eff, gd, w_g.data, optimize=True)
    out = np.maximum(z, 0.0) if activation == "relu" else z

    def bwd(g):
        g3 = g[None] if squeeze else g
        dz = g3 * (z > 0) if activation == "relu" else g3
        p = np.einsum("lk,nlc->nkc", a_eff, gd, optimize=True)
        dw = np.einsum("nkd,nkc->dc", dz, p, optimize=True)
        dp = np.einsum("nkd,dc->nkc", dz, w_g.data, optimize=True)
        dg = np.einsum("lk,nkc->nlc", a_eff, dp, optimize=True)
        da_eff = np.einsum("nlc,nkc->lk", gd, dp, optimize=True)
        da = np.zeros_like(a_g.data)
        da[:kp, :kp] = -da_eff if laplacian_variant else da_eff
        return (dg[0] if squeeze else dg), dw, da

    return _make("graph_conv", out[0] if squeeze else out, (g_in, w_g, a_g), bwd)


def pgm_forward(f_b, f_merge, w_g, a_g, k, laplacian_variant=False):
    """sample -> gather -> graph conv -> scatter.  k == 0 disables the
    module and returns f_merge untouched."""
    if k == 0:
        return f_merge
    indices = sample_topk(f_b, k)
    g_in = gather_features(f_merge, indices)
    g_out = graph_conv(g_in, w_g, a_g, laplacian_variant=laplacian_variant)
    return scatter_back(f_merge, g_out, indices)


class Pgm(Module):
    """Holds the projection and adjacency parameters.

    Both start near the identity map (adjacency exactly zero in the
    Laplacian variant, where I - A supplies the identity) so an
    untrained block approximately passes features through.
    """

    def __init__(self, channels, k, rng, laplacian_variant=False):
        super().__init__()
        self.k = k
        self.laplacian_variant = laplacian_variant
        w = np.eye(channels) + rng.normal(0.0, 0.02, size=(channels, channels))
        self.w_g = Tensor(w.astype(np.float32), requires_grad=True, name="w_g")
        kk = max(k, 1)
        a = np.zeros((kk, kk)) if laplacian_variant else np.eye(kk)
        a += rng.normal(0.0, 0.01, size=(kk, kk))
        self.a_g = Tensor(a.astype(np.float32), requires_grad=True, name="a_g")

    def forward(self, f_b, f_merge):
        return pgm_forward(f_b, f_merge, self.w_g, self.a_g, self.k,
                           laplacian_variant=self.laplacian_variant)
