"""Metric suite against brute-force oracles and hand-computed cases."""

import numpy as np
import pytest

from boundaryseg.maskops import contour_mask
from boundaryseg.metrics import (BOUNDARY_THRESHOLDS, ConfusionCounts,
                                 accuracy, ber, boundary_f1, confusion,
                                 confusion_sum, evaluate_pair, f_beta, iou,
                                 mae, summarize)


def tally_bruteforce(pred, gt, ignore=None):
    tp = fp = tn = fn = 0
    for y in range(pred.shape[0]):
        for x in range(pred.shape[1]):
            if ignore is not None and ignore[y, x]:
                continue
            p, g = bool(pred[y, x]), bool(gt[y, x])
            if p and g:
                tp += 1
            elif p and not g:
                fp += 1
            elif not p and g:
                fn += 1
            else:
                tn += 1
    return ConfusionCounts(tp=tp, fp=fp, tn=tn, fn=fn)


def boundary_f1_bruteforce(pred, gt, t_px):
    """All-pairs Euclidean matching of contour pixels, the test oracle."""
    pc = np.argwhere(contour_mask(pred))
    gc = np.argwhere(contour_mask(gt))
    if len(pc) == 0 and len(gc) == 0:
        return 1.0
    if len(pc) == 0 or len(gc) == 0:
        return 0.0
    d = np.sqrt((((pc[:, None, :] - gc[None, :, :]) ** 2).sum(axis=2)))
    prec = float((d.min(axis=1) <= t_px).mean())
    rec = float((d.min(axis=0) <= t_px).mean())
    if prec + rec == 0:
        return 0.0
    return 2 * prec * rec / (prec + rec)


class TestConfusion:
    def test_perfect(self):
        g = (np.random.default_rng(0).random((8, 8)) < 0.5).astype(np.uint8)
        c = confusion(g, g)
        assert c.fp == 0 and c.fn == 0

    def test_inverted(self):
        g = (np.random.default_rng(1).random((8, 8)) < 0.5).astype(np.uint8)
        c = confusion(1 - g, g)
        assert c.tp == 0 and c.tn == 0

    def test_random_matches_tally(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            pred = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
            ign = rng.random((16, 16)) < 0.2
            got = confusion(pred, gt, ign)
            want = tally_bruteforce(pred, gt, ign)
            assert got == want
            assert got.total == (~ign).sum()


class TestIou:
    def test_perfect(self):
        fg, bg, m = iou(ConfusionCounts(tp=5, fp=0, tn=10, fn=0))
        assert (fg, bg, m) == (1.0, 1.0, 1.0)

    def test_disjoint_foreground(self):
        fg, _, _ = iou(ConfusionCounts(tp=0, fp=4, tn=8, fn=4))
        assert fg == 0.0

    def test_hand_case(self):
        pred = np.array([[1, 1], [0, 0]], dtype=np.uint8)
        gt = np.array([[1, 0], [0, 0]], dtype=np.uint8)
        fg, bg, m = iou(confusion(pred, gt))
        assert fg == pytest.approx(1 / 2)
        assert bg == pytest.approx(2 / 3)
        assert m == pytest.approx(7 / 12)

    def test_empty_union_excluded(self):
        # no foreground anywhere: fg IoU undefined, mean over bg only
        fg, bg, m = iou(ConfusionCounts(tp=0, fp=0, tn=9, fn=0))
        assert np.isnan(fg) and bg == 1.0 and m == 1.0

    def test_all_undefined_raises(self):
        with pytest.raises(ValueError):
            iou(ConfusionCounts(tp=0, fp=0, tn=0, fn=0))


class TestMae:
    def test_exact(self):
        g = (np.random.default_rng(3).random((8, 8)) < 0.5).astype(np.uint8)
        assert mae(g.astype(np.float32), g) == 0.0

    def test_inverted(self):
        g = (np.random.default_rng(4).random((8, 8)) < 0.5).astype(np.uint8)
        assert mae(1.0 - g.astype(np.float32), g) == 1.0

    def test_half_everywhere(self):
        g = (np.random.default_rng(5).random((8, 8)) < 0.7).astype(np.uint8)
        assert mae(np.full((8, 8), 0.5, dtype=np.float32), g) == pytest.approx(0.5)


class TestBer:
    def test_perfect(self):
        assert ber(ConfusionCounts(tp=5, fp=0, tn=5, fn=0)) == 0.0

    def test_inverted(self):
        assert ber(ConfusionCounts(tp=0, fp=5, tn=0, fn=5)) == 100.0

    def test_all_positive_on_balanced(self):
        assert ber(ConfusionCounts(tp=8, fp=8, tn=0, fn=0)) == 50.0

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            ber(ConfusionCounts(tp=4, fp=0, tn=0, fn=4))


class TestFBeta:
    def test_perfect(self):
        assert f_beta(ConfusionCounts(tp=9, fp=0, tn=3, fn=0)) == 1.0

    def test_no_true_positive(self):
        assert f_beta(ConfusionCounts(tp=0, fp=3, tn=3, fn=3)) == 0.0

    def test_equal_precision_recall(self):
        # P == R == 0.75; F equals them regardless of beta
        c = ConfusionCounts(tp=3, fp=1, tn=5, fn=1)
        assert f_beta(c, beta2=0.3) == pytest.approx(0.75)
        assert f_beta(c, beta2=1.0) == pytest.approx(0.75)


class TestBoundaryF1:
    def test_identical_masks(self):
        m = np.zeros((32, 32), dtype=np.uint8)
        m[8:20, 10:25] = 1
        for t in BOUNDARY_THRESHOLDS:
            assert boundary_f1(m, m, t) == 1.0

    def test_threshold_set(self):
        assert BOUNDARY_THRESHOLDS == (3, 5, 9, 12)

    def test_shifted_segment(self):
        # straight vertical edges 4 px apart: miss at 3 px, hit at 5 px
        a = np.zeros((16, 32), dtype=np.uint8)
        b = np.zeros((16, 32), dtype=np.uint8)
        a[:, 8:24] = 1
        b[:, 12:28] = 1
        assert boundary_f1(a, b, 3) == 0.0
        assert boundary_f1(a, b, 5) == 1.0

    def test_empty_cases(self):
        empty = np.zeros((8, 8), dtype=np.uint8)
        full = np.zeros((8, 8), dtype=np.uint8)
        full[2:5, 2:5] = 1
        assert boundary_f1(empty, empty, 3) == 1.0
        assert boundary_f1(full, empty, 3) == 0.0
        assert boundary_f1(empty, full, 3) == 0.0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            pred = np.zeros((32, 32), dtype=np.uint8)
            gt = np.zeros((32, 32), dtype=np.uint8)
            y, x = rng.integers(4, 20, size=2)
            h, w = rng.integers(4, 10, size=2)
            pred[y:y + h, x:x + w] = 1
            dy, dx = rng.integers(-3, 4, size=2)
            gt[y + dy:y + h + dy, x + dx:x + w + dx] = 1
            for t in (3, 5):
                got = boundary_f1(pred, gt, t)
                want = boundary_f1_bruteforce(pred, gt, t)
                assert got == pytest.approx(want, abs=1e-9)

    def test_monotone_in_threshold(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            pred = (rng.random((24, 24)) < 0.4).astype(np.uint8)
            gt = (rng.random((24, 24)) < 0.4).astype(np.uint8)
            vals = [boundary_f1(pred, gt, t) for t in (3, 5, 9, 12)]
            assert all(a <= b + 1e-12 for a, b in zip(vals, vals[1:]))

    def test_threshold_validation(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        with pytest.raises(ValueError):
            boundary_f1(m, m, 0)


class TestAggregation:
    def _random_reports(self, n, seed):
        rng = np.random.default_rng(seed)
        reports = []
        for _ in range(n):
            gt = np.zeros((16, 16), dtype=np.uint8)
            gt[4:12, 4:12] = 1
            pred = gt.copy()
            flips = rng.integers(0, 16, size=(6, 2))
            for y, x in flips:
                pred[y, x] ^= 1
            reports.append(evaluate_pair(pred, pred.astype(np.float32), gt))
        return reports

    def test_summary_is_mean_over_valid(self):
        reports = self._random_reports(8, 8)
        s = summarize(reports)
        assert s.miou == pytest.approx(np.mean([r.miou for r in reports]))

    def test_counts_sum_order_independent(self):
        rng = np.random.default_rng(9)
        counts = []
        preds, gts = [], []
        for _ in range(6):
            pred = (rng.random((12, 12)) < 0.5).astype(np.uint8)
            gt = (rng.random((12, 12)) < 0.5).astype(np.uint8)
            preds.append(pred)
            gts.append(gt)
            counts.append(confusion(pred, gt))
        total = confusion_sum(counts)
        reverse = confusion_sum(counts[::-1])
        assert total == reverse
        # equals one confusion over the concatenated maps
        cat = confusion(np.concatenate(preds), np.concatenate(gts))
        assert total == cat

    def test_permutation_invariance_non_spatial(self):
        rng = np.random.default_rng(10)
        pred = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        gt = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        perm = rng.permutation(256)
        ps = pred.reshape(-1)[perm].reshape(16, 16)
        gs = gt.reshape(-1)[perm].reshape(16, 16)
        a, b = confusion(pred, gt), confusion(ps, gs)
        assert iou(a) == iou(b)
        assert accuracy(a) == accuracy(b)
        assert ber(a) == ber(b)
        assert f_beta(a) == f_beta(b)
        assert mae(pred.astype(np.float32), gt) == mae(ps.astype(np.float32), gs)

    def test_report_ranges(self):
        for r in self._random_reports(5, 11):
            assert 0.0 <= r.miou <= 1.0
            assert 0.0 <= r.acc <= 1.0
            assert 0.0 <= r.mae <= 1.0
            assert 0.0 <= r.ber <= 100.0
            assert 0.0 <= r.f_beta <= 1.0
            for v in r.boundary_f1.values():
                assert 0.0 <= v <= 1.0
