"""Scene generator and ground-truth derivation."""

import numpy as np
import pytest
from scipy import ndimage

from boundaryseg.maskops import contour_mask
from boundaryseg.synth import (IGNORE, derive_edge_gt, derive_residual_gt,
                               gen_scene, gen_scene_with_trace)


def cheb_band_bruteforce(mask, radius):
    """All-pairs Chebyshev distance to the contour, the test oracle."""
    contour = contour_mask(mask)
    h, w = mask.shape
    out = np.zeros((h, w), dtype=np.uint8)
    pts = np.argwhere(contour)
    if len(pts) == 0:
        return out
    for y in range(h):
        for x in range(w):
            d = np.abs(pts - [y, x]).max(axis=1).min()
            if d <= radius:
                out[y, x] = 1
    return out


class TestGenScene:
    def test_deterministic(self):
        a = gen_scene(42, 64, 2)
        b = gen_scene(42, 64, 2)
        assert np.array_equal(a.image, b.image)
        assert np.array_equal(a.mask_m, b.mask_m)
        assert np.array_equal(a.mask_e, b.mask_e)
        assert np.array_equal(a.mask_r, b.mask_r)

    def test_single_object_is_connected(self):
        for seed in range(10):
            s = gen_scene(seed, 64, 1)
            _, n = ndimage.label(s.mask_m)
            assert n == 1

    def test_image_range_and_dtype(self):
        s = gen_scene(7, 64, 3)
        assert s.image.dtype == np.float32
        assert s.image.min() >= 0.0 and s.image.max() <= 1.0
        assert set(np.unique(s.mask_m)) <= {0, 1}
        assert set(np.unique(s.mask_e)) <= {0, 1}
        assert set(np.unique(s.mask_r)) <= {0, 1, IGNORE}

    def test_interior_matches_warped_background(self):
        # The glass premise: interiors replicate the shifted background.
        diffs = []
        for seed in range(100):
            s, tr = gen_scene_with_trace(seed, 64, 1)
            kind, m, (dy, dx), tint = tr.objects[0]
            warped = np.roll(tr.background, (dy, dx), axis=(1, 2))
            interior = m & ~tr.rim
            diffs.append(np.abs(s.image[:, interior]
                                - warped[:, interior]).mean())
        assert max(diffs) < 0.15

    def test_min_area_never_emitted(self):
        for seed in range(30):
            s = gen_scene(seed, 64, 4)
            assert s.mask_m.sum() >= 16

    def test_param_validation(self):
        with pytest.raises(ValueError):
            gen_scene(0, 16, 1)
        with pytest.raises(ValueError):
            gen_scene(0, 64, 0)
        with pytest.raises(ValueError):
            gen_scene(0, 64, 5)


class TestEdgeGt:
    def test_empty_mask(self):
        assert derive_edge_gt(np.zeros((16, 16), dtype=np.uint8)).sum() == 0

    def test_default_thickness_is_eight(self):
        import inspect
        sig = inspect.signature(derive_edge_gt)
        assert sig.parameters["thickness"].default == 8

    def test_square_band_matches_bruteforce(self):
        mask = np.zeros((64, 64), dtype=np.uint8)
        mask[24:40, 24:40] = 1
        got = derive_edge_gt(mask, 8)
        want = cheb_band_bruteforce(mask, 4)
        np.testing.assert_array_equal(got, want)

    @pytest.mark.parametrize("thickness", [1, 2, 5, 8])
    def test_random_masks_match_bruteforce(self, thickness):
        rng = np.random.default_rng(thickness)
        for _ in range(5):
            mask = (rng.random((24, 24)) < 0.3).astype(np.uint8)
            got = derive_edge_gt(mask, thickness)
            want = cheb_band_bruteforce(mask, thickness // 2)
            np.testing.assert_array_equal(got, want)

    def test_thickness_monotone(self):
        s = gen_scene(3, 64, 2)
        prev = derive_edge_gt(s.mask_m, 1)
        for t in (2, 4, 6, 8, 12):
            cur = derive_edge_gt(s.mask_m, t)
            assert np.all(cur >= prev)  # band only grows
            prev = cur

    def test_contour_covered(self):
        for seed in range(5):
            s = gen_scene(seed, 64, 2)
            contour = contour_mask(s.mask_m)
            assert np.all(s.mask_e[contour] == 1)

    def test_thickness_validation(self):
        with pytest.raises(ValueError):
            derive_edge_gt(np.zeros((4, 4), dtype=np.uint8), 0)


class TestResidualGt:
    def test_no_edge_keeps_mask(self):
        m = (np.random.default_rng(0).random((8, 8)) < 0.5).astype(np.uint8)
        r = derive_residual_gt(m, np.zeros_like(m))
        np.testing.assert_array_equal(r, m)

    def test_all_edge_all_ignore(self):
        m = (np.random.default_rng(1).random((8, 8)) < 0.5).astype(np.uint8)
        r = derive_residual_gt(m, np.ones_like(m))
        assert np.all(r == IGNORE)

    def test_ignore_count_equals_edge_count(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            m = (rng.random((16, 16)) < 0.4).astype(np.uint8)
            e = (rng.random((16, 16)) < 0.3).astype(np.uint8)
            r = derive_residual_gt(m, e)
            assert (r == IGNORE).sum() == (e == 1).sum()

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            derive_residual_gt(np.zeros((4, 4), dtype=np.uint8),
                               np.zeros((5, 5), dtype=np.uint8))


class TestInvariants:
    def test_partition(self):
        # edge pixels and non-ignored residual pixels tile the grid
        for seed in range(10):
            s = gen_scene(seed, 64, 2)
            edge = s.mask_e == 1
            kept = s.mask_r != IGNORE
            assert np.all(edge ^ kept)

    def test_residual_agrees_with_mask_off_band(self):
        for seed in range(5):
            s = gen_scene(seed, 64, 3)
            off = s.mask_e == 0
            np.testing.assert_array_equal(s.mask_r[off], s.mask_m[off])
