import math

import numpy as np
import pytest

from crystalseg import metrics
from crystalseg.errors import (
    EmptyInstance,
    EmptyLabelMap,
    EmptyOperands,
    ShapeMismatch,
)

from reference import aji_reference, disk_mask, pq_reference, random_label_map


def labels_from_masks(shape, *masks):
    labels = np.zeros(shape, np.int32)
    for i, m in enumerate(masks, start=1):
        labels[m] = i
    return labels


class TestIou:
    def test_identical(self):
        m = disk_mask((20, 20), (10, 10), 5)
        assert metrics.iou(m, m) == 1.0

    def test_disjoint(self):
        a = np.zeros((10, 10), bool)
        b = np.zeros((10, 10), bool)
        a[0, 0] = True
        b[5, 5] = True
        assert metrics.iou(a, b) == 0.0

    def test_partial_overlap(self):
        # |a| = |b| = 100, overlap 60 -> 60/140
        a = np.zeros((20, 20), bool)
        b = np.zeros((20, 20), bool)
        a.flat[:100] = True
        b.flat[40:140] = True
        assert metrics.iou(a, b) == pytest.approx(60 / 140)

    def test_both_empty_raises(self):
        z = np.zeros((4, 4), bool)
        with pytest.raises(EmptyOperands):
            metrics.iou(z, z)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            metrics.iou(np.zeros((4, 4), bool), np.zeros((4, 5), bool))


class TestPanopticQuality:
    def test_exact_prediction(self):
        gt = labels_from_masks((32, 32), disk_mask((32, 32), (10, 10), 5),
                               disk_mask((32, 32), (24, 24), 4))
        pq, match = metrics.panoptic_quality(gt, gt)
        assert pq == 1.0
        assert len(match.tp) == 2 and not match.fp and not match.fn

    def test_single_pair_iou_is_pq(self):
        # one gt instance, one pred with IoU 0.6 -> pq 0.6
        gt = np.zeros((10, 12), np.int32)
        pred = np.zeros((10, 12), np.int32)
        gt.flat[:60] = 1
        pred.flat[15:75] = 1  # overlap 45, union 75 -> iou 0.6
        pq, match = metrics.panoptic_quality(gt, pred)
        assert pq == pytest.approx(0.6)
        assert match.tp[0][2] == pytest.approx(0.6)

    def test_spurious_extra_pred(self):
        # one perfect match plus one spurious pred -> 1.0 / 1.5
        m = disk_mask((32, 32), (10, 10), 5)
        spur = disk_mask((32, 32), (25, 25), 3)
        gt = labels_from_masks((32, 32), m)
        pred = labels_from_masks((32, 32), m, spur)
        pq, match = metrics.panoptic_quality(gt, pred)
        assert pq == pytest.approx(1.0 / 1.5)
        assert match.fp == [2]

    def test_doubly_empty_is_one(self):
        z = np.zeros((8, 8), np.int32)
        pq, match = metrics.panoptic_quality(z, z)
        assert pq == 1.0
        assert not match.tp and not match.fp and not match.fn

    def test_one_sided_empty_is_zero(self):
        z = np.zeros((8, 8), np.int32)
        gt = z.copy()
        gt[2:5, 2:5] = 1
        assert metrics.panoptic_quality(gt, z)[0] == 0.0
        assert metrics.panoptic_quality(z, gt)[0] == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            metrics.panoptic_quality(np.zeros((4, 4), np.int32),
                                     np.zeros((5, 4), np.int32))

    def test_symmetry(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            a = random_label_map(rng, (24, 24), 5)
            b = random_label_map(rng, (24, 24), 5)
            assert metrics.panoptic_quality(a, b)[0] == pytest.approx(
                metrics.panoptic_quality(b, a)[0], abs=1e-12
            )

    def test_matches_brute_force_on_random_maps(self):
        rng = np.random.default_rng(7)
        for _ in range(60):
            gt = random_label_map(rng, (32, 32), 6)
            pred = random_label_map(rng, (32, 32), 6)
            pq, match = metrics.panoptic_quality(gt, pred)
            ref_pq, ref_tp, ref_fp, ref_fn = pq_reference(gt, pred)
            assert pq == pytest.approx(ref_pq, abs=1e-9)
            assert sorted(match.fp) == ref_fp
            assert sorted(match.fn) == ref_fn
            assert sorted((p, g) for p, g, _ in match.tp) == [
                (p, g) for p, g, _ in sorted(ref_tp)
            ]

    def test_id_permutation_invariant(self):
        rng = np.random.default_rng(3)
        gt = random_label_map(rng, (24, 24), 5)
        pred = random_label_map(rng, (24, 24), 5)
        perm = np.concatenate([[0], rng.permutation(np.arange(1, 50)) + 50])
        assert metrics.panoptic_quality(perm[gt], pred)[0] == pytest.approx(
            metrics.panoptic_quality(gt, pred)[0], abs=1e-12
        )


class TestAggregatedJaccard:
    def test_exact_prediction(self):
        gt = labels_from_masks((32, 32), disk_mask((32, 32), (10, 10), 5),
                               disk_mask((32, 32), (24, 24), 4))
        assert metrics.aggregated_jaccard(gt, gt) == 1.0

    def test_empty_pred(self):
        gt = np.zeros((8, 8), np.int32)
        gt[1:4, 1:4] = 1
        assert metrics.aggregated_jaccard(gt, np.zeros((8, 8), np.int32)) == 0.0

    def test_empty_gt_nonempty_pred(self):
        pred = np.zeros((8, 8), np.int32)
        pred[1:4, 1:4] = 1
        assert metrics.aggregated_jaccard(np.zeros((8, 8), np.int32), pred) == 0.0

    def test_doubly_empty(self):
        z = np.zeros((8, 8), np.int32)
        assert metrics.aggregated_jaccard(z, z) == 1.0

    def test_matches_reference_on_random_maps(self):
        rng = np.random.default_rng(17)
        for _ in range(80):
            gt = random_label_map(rng, (16, 16), 4)
            pred = random_label_map(rng, (16, 16), 4)
            assert metrics.aggregated_jaccard(gt, pred) == pytest.approx(
                aji_reference(gt, pred), abs=1e-9
            )

    def test_not_symmetric(self):
        # Greedy claiming depends on which side iterates: a small gt instance
        # claims the big pred first in one direction only.
        lo = np.zeros((12, 10), np.int32)
        lo[10:11, :] = 1   # 10 px
        lo[0:10, :] = 2    # 100 px
        hi = np.zeros((12, 10), np.int32)
        hi[0:11, :] = 1    # 110 px spanning both
        forward = metrics.aggregated_jaccard(lo, hi)
        backward = metrics.aggregated_jaccard(hi, lo)
        assert forward == pytest.approx(10 / 210)
        assert backward == pytest.approx(100 / 120)
        assert forward == pytest.approx(aji_reference(lo, hi), abs=1e-12)
        assert backward == pytest.approx(aji_reference(hi, lo), abs=1e-12)

    def test_tie_goes_to_lower_pred_id(self):
        # two preds with identical IoU against gt 1; lower id must be claimed,
        # leaving the higher one as unused pixels for gt 2 to miss.
        gt = np.zeros((6, 12), np.int32)
        gt[:, :4] = 1
        pred = np.zeros((6, 12), np.int32)
        pred[:3, :4] = 1
        pred[3:, :4] = 2
        val = metrics.aggregated_jaccard(gt, pred)
        assert val == pytest.approx(aji_reference(gt, pred), abs=1e-12)
        # claimed pred 1: inter 12, union 24; unused pred 2 adds 12
        assert val == pytest.approx(12 / 36)


class TestCrystalSize:
    def test_exact_formula_inversion(self):
        assert metrics.crystal_size(math.pi) == pytest.approx(2.0)

    def test_area_100(self):
        assert metrics.crystal_size(100) == pytest.approx(11.2838, abs=5e-5)

    def test_rasterized_disk_within_two_percent(self):
        d = disk_mask((64, 64), (32, 32), 20)
        size = metrics.crystal_size(int(d.sum()))
        assert abs(size - 40.0) / 40.0 < 0.02

    def test_zero_area_raises(self):
        with pytest.raises(EmptyInstance):
            metrics.crystal_size(0)


class TestAcs:
    def test_single_instance(self):
        labels = np.zeros((10, 10), np.int32)
        labels.flat[:100] = 1
        assert metrics.acs(labels) == pytest.approx(11.2838, abs=5e-5)

    def test_two_equal_instances(self):
        labels = np.zeros((10, 20), np.int32)
        labels[:, :10] = 1
        labels[:, 10:] = 2
        one = np.zeros((10, 10), np.int32)
        one[:] = 1
        assert metrics.acs(labels) == pytest.approx(metrics.acs(one))

    def test_known_areas(self):
        # areas 100 and 400: mean of hand-computed equivalent diameters
        labels = np.zeros((25, 25), np.int32)
        labels.flat[:100] = 1
        labels.flat[200:600] = 2
        assert metrics.acs(labels) == pytest.approx(16.925687506432688, abs=1e-9)

    def test_empty_raises(self):
        with pytest.raises(EmptyLabelMap):
            metrics.acs(np.zeros((5, 5), np.int32))


class TestSizeErrors:
    def test_exact_prediction(self):
        gt = labels_from_masks((32, 32), disk_mask((32, 32), (16, 16), 8))
        mae, mre = metrics.size_errors(gt, gt)
        assert mae == 0.0 and mre == 0.0

    def test_hand_arithmetic(self):
        # acs_gt 11.2838 (area 100), acs_pred from area 25 -> half the size
        gt = np.zeros((16, 16), np.int32)
        gt.flat[:100] = 1
        pred = np.zeros((16, 16), np.int32)
        pred.flat[:25] = 1
        mae, mre = metrics.size_errors(gt, pred)
        assert mae == pytest.approx(metrics.crystal_size(100) / 2)
        assert mre == pytest.approx(0.5)

    def test_empty_pred_counts_as_zero(self):
        gt = np.zeros((16, 16), np.int32)
        gt.flat[:100] = 1
        mae, mre = metrics.size_errors(gt, np.zeros((16, 16), np.int32))
        assert mae == pytest.approx(metrics.crystal_size(100))
        assert mre == pytest.approx(1.0)

    def test_merged_disks(self):
        # two r=10 disks predicted as a single instance; frozen oracle values
        shape = (32, 64)
        d1 = disk_mask(shape, (16, 16), 10)
        d2 = disk_mask(shape, (16, 48), 10)
        gt = labels_from_masks(shape, d1, d2)
        pred = labels_from_masks(shape, d1 | d2)
        mae, mre = metrics.size_errors(gt, pred)
        assert metrics.acs(pred) > metrics.acs(gt)
        assert mae == pytest.approx(8.321641554160408, abs=1e-9)
        assert mre == pytest.approx(0.41421356237309515, abs=1e-9)


class TestHomogeneityAndClass:
    def test_uniform_lengths_class_one(self):
        labels = np.zeros((120, 240), np.int32)
        labels[10:60, 10:60] = 1    # length 50
        labels[10:60, 100:150] = 2  # length 50
        score, cls = metrics.homogeneity_and_class(labels, 224)
        assert score == 1.0 and cls == 1

    def test_high_variation_class_two(self):
        labels = np.zeros((700, 700), np.int32)
        labels[0:30, 0:20] = 1      # length 30
        labels[50:650, 50:650] = 2  # length 600
        score, cls = metrics.homogeneity_and_class(labels, 224)
        assert score == pytest.approx(0.05) and cls == 2

    def test_moderate_variation_class_three(self):
        labels = np.zeros((700, 700), np.int32)
        labels[0:150, 0:100] = 1    # length 150
        labels[200:700, 100:700] = 2  # length 600
        score, cls = metrics.homogeneity_and_class(labels, 224)
        assert score == pytest.approx(0.25) and cls == 3

    def test_empty_raises(self):
        with pytest.raises(EmptyLabelMap):
            metrics.homogeneity_and_class(np.zeros((5, 5), np.int32), 224)


def test_metrics_within_unit_interval_on_random_maps():
    rng = np.random.default_rng(23)
    for _ in range(40):
        gt = random_label_map(rng, (20, 20), 5)
        pred = random_label_map(rng, (20, 20), 5)
        pq = metrics.panoptic_quality(gt, pred)[0]
        aji = metrics.aggregated_jaccard(gt, pred)
        assert 0.0 <= pq <= 1.0
        assert 0.0 <= aji <= 1.0
