"""Synthetic glass-like scenes with derived ground truths.

A scene is a multi-octave value-noise background plus 1..4 convex
objects (ellipses or convex polygons).  Each object's interior copies
the background under a small integer translation (the "warp") with a
faint brightness tint, and the object contour gets a thin bright rim,
so the interior matches the background statistically and the boundary
is the dominant cue.

Ground truths: the segmentation mask, an edge band of configurable
thickness around the mask contour, and a residual mask where edge-band
pixels are marked ignore (255) and everything else copies the mask.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .maskops import chebyshev_band, contour_mask
from .tensor import _resize_matrix

IGNORE = 255

DEFAULT_THICKNESS = 8


@dataclass
class Sample:
    image: np.ndarray   # float32 (3,H,W) in [0,1]
    mask_m: np.ndarray  # uint8 (H,W) in {0,1}
    mask_e: np.ndarray  # uint8 (H,W) in {0,1}
    mask_r: np.ndarray  # uint8 (H,W) in {0,1,IGNORE}
    seed: int


@dataclass
class SceneTrace:
    """Construction internals exposed for fidelity tests only."""
    background: np.ndarray                    # float32 (3,H,W)
    rim: np.ndarray                           # bool (H,W)
    objects: list = field(default_factory=list)  # (kind, mask, (dy,dx), tint)


def derive_edge_gt(mask_m, thickness=DEFAULT_THICKNESS):
    """Edge band: pixels within Chebyshev distance thickness//2 of the
    mask contour.  An all-zero mask has no contour, hence no band."""
    if thickness < 1:
        raise ValueError(f"thickness must be >= 1, got {thickness}")
    band = chebyshev_band(contour_mask(mask_m), thickness // 2)
    return band.astype(np.uint8)


def derive_residual_gt(mask_m, mask_e):
    """Copy of mask_m with edge-band pixels marked ignore."""
    if mask_m.shape != mask_e.shape:
        raise ValueError(f"shape mismatch {mask_m.shape} vs {mask_e.shape}")
    return np.where(mask_e == 1, IGNORE, mask_m).astype(np.uint8)


def _value_noise(rng, size):
    """Multi-octave value noise in [0,1], shape (size, size)."""
    acc = np.zeros((size, size), dtype=np.float64)
    for grid, amp in ((4, 1.0), (8, 0.5), (16, 0.25), (32, 0.125)):
        lattice = rng.random((grid + 1, grid + 1))
        up = _resize_matrix(grid + 1, size, np.float64)
        acc += amp * (up @ lattice @ up.T)
    lo, hi = acc.min(), acc.max()
    return (acc - lo) / (hi - lo) if hi > lo else np.full_like(acc, 0.5)


def _background(rng, size):
    base = _value_noise(rng, size)
    # Per-channel offsets keep it colored but correlated across RGB.
    chans = [0.15 + 0.6 * np.clip(base + rng.uniform(-0.08, 0.08), 0, 1)
             for _ in range(3)]
    return np.stack(chans).astype(np.float32)


def _ellipse_mask(rng, size, scale=1.0):
    margin = 0.38 * scale
    cy, cx = rng.uniform((0.5 - margin / 2) * size, (0.5 + margin / 2) * size,
                         size=2)
    ry = rng.uniform(0.26 * size * scale, 0.36 * size * scale)
    rx = rng.uniform(0.26 * size * scale, 0.36 * size * scale)
    theta = rng.uniform(0, np.pi)
    yy, xx = np.mgrid[0:size, 0:size]
    y = yy - cy
    x = xx - cx
    u = np.cos(theta) * x + np.sin(theta) * y
    v = -np.sin(theta) * x + np.cos(theta) * y
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _polygon_mask(rng, size, scale=1.0):
    margin = 0.3 * scale
    cy, cx = rng.uniform((0.5 - margin / 2) * size, (0.5 + margin / 2) * size,
                         size=2)
    n_vert = int(rng.integers(5, 9))
    # Jittered evenly-spaced angles keep the half-plane kernel fat.
    angles = (np.arange(n_vert) + rng.uniform(0.2, 0.8, size=n_vert)) \
        * (2 * np.pi / n_vert)
    radii = rng.uniform(0.25 * size * scale, 0.36 * size * scale, size=n_vert)
    vy = cy + radii * np.sin(angles)
    vx = cx + radii * np.cos(angles)
    yy, xx = np.mgrid[0:size, 0:size]
    inside = np.ones((size, size), dtype=bool)
    for i in range(n_vert):
        j = (i + 1) % n_vert
        # Vertices wind counter-clockwise in (x, y sin) terms: keep the
        # half-plane where the cross product is non-negative.
        cross = ((vx[j] - vx[i]) * (yy - vy[i])
                 - (vy[j] - vy[i]) * (xx - vx[i]))
        inside &= cross >= 0
    return inside


def gen_scene_with_trace(seed, size=64, n_objects=1, thickness=DEFAULT_THICKNESS):
    """Deterministic scene build; the trace carries warp/tint internals."""
    if size < 32:
        raise ValueError(f"size must be >= 32, got {size}")
    if not 1 <= n_objects <= 4:
        raise ValueError(f"n_objects must be in 1..4, got {n_objects}")
    rng = np.random.default_rng(np.uint64(seed))
    bg = _background(rng, size)
    image = bg.copy()
    mask = np.zeros((size, size), dtype=bool)
    trace = SceneTrace(background=bg, rim=np.zeros((size, size), dtype=bool))

    # Objects share the canvas: per-object extent shrinks with count.
    scale = 1.0 / np.sqrt(n_objects)
    for _ in range(n_objects):
        for _attempt in range(100):
            if rng.random() < 0.5:
                kind, shape = "ellipse", _ellipse_mask(rng, size, scale)
            else:
                kind, shape = "polygon", _polygon_mask(rng, size, scale)
            if shape.sum() >= 16:
                break
        else:
            raise RuntimeError("could not sample a non-degenerate object")
        dy = int(rng.integers(1, 5)) * (1 if rng.random() < 0.5 else -1)
        dx = int(rng.integers(1, 5)) * (1 if rng.random() < 0.5 else -1)
        tint = float(rng.uniform(-0.15, 0.15))
        warped = np.roll(bg, (dy, dx), axis=(1, 2))
        image[:, shape] = np.clip(warped[:, shape] * (1.0 + tint), 0.0, 1.0)
        mask |= shape
        trace.objects.append((kind, shape, (dy, dx), tint))

    # Thin bright rim: the union contour plus its outer 1-px ring.
    rim = contour_mask(mask)
    outer = contour_mask(~mask) & ~mask
    rim_band = rim | outer
    image[:, rim_band] = np.clip(image[:, rim_band] + 0.35, 0.0, 1.0)
    trace.rim = rim_band

    mask_m = mask.astype(np.uint8)
    mask_e = derive_edge_gt(mask_m, thickness)
    mask_r = derive_residual_gt(mask_m, mask_e)
    sample = Sample(image=image.astype(np.float32), mask_m=mask_m,
                    mask_e=mask_e, mask_r=mask_r, seed=int(seed))
    return sample, trace


def gen_scene(seed, size=64, n_objects=1, thickness=DEFAULT_THICKNESS):
    sample, _ = gen_scene_with_trace(seed, size, n_objects, thickness)
    return sample


# ---------------------------------------------------------------------------
# on-disk datasets


def write_dataset(out_dir, split, seeds, size=64, n_objects=1,
                  thickness=DEFAULT_THICKNESS):
    """PPM image + _m/_e/_r PGM masks per sample, plus a seed manifest."""
    out = Path(out_dir) / split
    out.mkdir(parents=True, exist_ok=True)
    for idx, seed in enumerate(seeds):
        s = gen_scene(seed, size=size, n_objects=n_objects, thickness=thickness)
        stem = f"{split}_{idx:05d}"
        io.write_ppm(out / f"{stem}.ppm", s.image)
        io.write_pgm(out / f"{stem}_m.pgm", s.mask_m)
        io.write_pgm(out / f"{stem}_e.pgm", s.mask_e)
        io.write_pgm(out / f"{stem}_r.pgm", s.mask_r)
    with open(out / "manifest.txt", "w", encoding="utf-8") as mf:
        for idx, seed in enumerate(seeds):
            mf.write(f"{split}_{idx:05d} {seed}\n")
    return out


def load_dataset(split_dir, thickness=DEFAULT_THICKNESS):
    split_dir = Path(split_dir)
    samples = []
    with open(split_dir / "manifest.txt", "r", encoding="utf-8") as mf:
        for line in mf:
            parts = line.split()
            if not parts:
                continue
            stem, seed = parts[0], int(parts[1])
            image = io.read_ppm(split_dir / f"{stem}.ppm")
            mask_m = io.read_pgm(split_dir / f"{stem}_m.pgm")
            e_path = split_dir / f"{stem}_e.pgm"
            mask_e = io.read_pgm(e_path) if e_path.exists() \
                else derive_edge_gt(mask_m, thickness)
            r_path = split_dir / f"{stem}_r.pgm"
            mask_r = io.read_pgm(r_path) if r_path.exists() \
                else derive_residual_gt(mask_m, mask_e)
            samples.append(Sample(image=image, mask_m=mask_m, mask_e=mask_e,
                                  mask_r=mask_r, seed=seed))
    return samples
