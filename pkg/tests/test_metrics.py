import math

import numpy as np
import pytest

from refseg.errors import ArgumentError
from refseg.metrics import (
    boundary,
    boundary_f,
    default_radius,
    iou,
    jf_mean,
    oc_iou,
    oc_iou_total,
    precision_at,
    summarize,
)


def pixels(mask):
    return {(int(r), int(c)) for r, c in zip(*np.nonzero(mask))}


def mask_of(shape, coords):
    mask = np.zeros(shape, dtype=bool)
    for r, c in coords:
        mask[r, c] = True
    return mask


# --- pixel-set reference implementations ---
def ref_iou(pred, gt):
    p, g = pixels(pred), pixels(gt)
    return 1.0 if not (p | g) else len(p & g) / len(p | g)


def ref_boundary(mask):
    h, w = mask.shape
    out = set()
    for r, c in pixels(mask):
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if not (0 <= rr < h and 0 <= cc < w) or not mask[rr, cc]:
                out.add((r, c))
                break
    return out


def ref_boundary_f(pred, gt, radius):
    pb, gb = ref_boundary(pred), ref_boundary(gt)
    if not pb and not gb:
        return 1.0
    if not pb or not gb:
        return 0.0

    def near(p, others):
        return any((p[0] - o[0]) ** 2 + (p[1] - o[1]) ** 2 <= radius ** 2 for o in others)

    precision = sum(near(p, gb) for p in pb) / len(pb)
    recall = sum(near(g, pb) for g in gb) / len(gb)
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


class TestIoU:
    def test_two_by_two(self):
        pred = mask_of((2, 2), [(0, 0), (0, 1)])
        gt = mask_of((2, 2), [(0, 1), (1, 1)])
        assert iou(pred, gt) == pytest.approx(1 / 3)

    def test_identical_and_disjoint(self):
        a = mask_of((4, 4), [(0, 0), (1, 1)])
        b = mask_of((4, 4), [(3, 3)])
        assert iou(a, a) == 1.0
        assert iou(a, b) == 0.0

    def test_empty_conventions(self):
        empty = np.zeros((3, 3), dtype=bool)
        assert iou(empty, empty) == 1.0
        assert iou(empty, mask_of((3, 3), [(1, 1)])) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ArgumentError):
            iou(np.zeros((2, 2)), np.zeros((3, 3)))


class TestPrecisionAt:
    def test_examples(self):
        assert precision_at([0.6, 0.4])[0.5] == 0.5
        assert precision_at([1.0, 1.0]) == {0.5: 1.0, 0.7: 1.0, 0.9: 1.0}
        assert precision_at([0.95, 0.75, 0.55, 0.2]) == {0.5: 0.75, 0.7: 0.5, 0.9: 0.25}

    def test_threshold_is_strict(self):
        assert precision_at([0.5, 0.7, 0.9]) == {0.5: 2 / 3, 0.7: 1 / 3, 0.9: 0.0}

    def test_non_increasing(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            values = list(precision_at(rng.random(10), thresholds=np.linspace(0, 1, 11)).values())
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_empty(self):
        with pytest.raises(ArgumentError):
            precision_at([])


class TestObjectCentricIoU:
    def test_all_predictions_exact(self):
        gt = mask_of((3, 3), [(0, 0), (1, 1)])
        assert oc_iou(gt, [gt, gt.copy()]) == 1.0

    def test_one_disjoint_prediction_empties_the_intersection(self):
        gt = mask_of((3, 3), [(0, 0)])
        assert oc_iou(gt, [gt, mask_of((3, 3), [(2, 2)])]) == 0.0

    def test_set_arithmetic(self):
        a, b, c = (0, 0), (0, 1), (0, 2)
        gt = mask_of((1, 3), [a, b])
        assert oc_iou(gt, [mask_of((1, 3), [a, b, c]), mask_of((1, 3), [a])]) == pytest.approx(1 / 3)

    def test_single_prediction_reduces_to_iou(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            gt, pred = rng.random((2, 8, 8)) > 0.5
            assert oc_iou(gt, [pred]) == iou(pred, gt)

    def test_total_is_mean_over_objects(self):
        gt = mask_of((1, 3), [(0, 0), (0, 1)])
        pairs = [(gt, [gt]), (gt, [mask_of((1, 3), [(0, 2)])])]
        assert oc_iou_total(pairs) == 0.5

    def test_empty_predictions(self):
        with pytest.raises(ArgumentError):
            oc_iou(np.ones((2, 2)), [])
        with pytest.raises(ArgumentError):
            oc_iou_total([])


class TestBoundaryF:
    def square(self, r0, c0, size=8, shape=(32, 32)):
        mask = np.zeros(shape, dtype=bool)
        mask[r0:r0 + size, c0:c0 + size] = True
        return mask

    def test_identical(self):
        assert boundary_f(self.square(8, 8), self.square(8, 8), radius=1) == 1.0

    def test_empty_prediction(self):
        assert boundary_f(np.zeros((32, 32), bool), self.square(8, 8), radius=1) == 0.0
        assert boundary_f(np.zeros((8, 8), bool), np.zeros((8, 8), bool)) == 1.0

    def test_one_pixel_shift_within_radius(self):
        assert boundary_f(self.square(9, 8), self.square(8, 8), radius=1) == 1.0
        assert boundary_f(self.square(9, 8), self.square(8, 8), radius=0) < 1.0

    def test_translation_invariance(self):
        rng = np.random.default_rng(2)
        pred = np.zeros((40, 40), bool)
        gt = np.zeros((40, 40), bool)
        pred[10:20, 10:20] = rng.random((10, 10)) > 0.3
        gt[10:20, 10:20] = rng.random((10, 10)) > 0.3
        moved = [np.roll(np.roll(m, 6, axis=0), 9, axis=1) for m in (pred, gt)]
        assert boundary_f(*moved, radius=2) == pytest.approx(boundary_f(pred, gt, radius=2))

    def test_boundary_touches_image_edge(self):
        full = np.ones((3, 3), dtype=bool)
        assert boundary(full).sum() == 8

    def test_default_radius(self):
        assert default_radius((64, 64)) == math.ceil(0.008 * math.hypot(64, 64)) == 1
        assert default_radius((480, 854)) == 8


def test_against_pixel_set_reference():
    rng = np.random.default_rng(0)
    for _ in range(100):
        pred, gt = rng.random((2, 8, 8)) > rng.uniform(0.2, 0.8)
        assert iou(pred, gt) == pytest.approx(ref_iou(pred, gt))
        assert pixels(boundary(pred)) == ref_boundary(pred)
        for radius in (0, 1, 2):
            assert boundary_f(pred, gt, radius) == pytest.approx(ref_boundary_f(pred, gt, radius))
        other = rng.random((8, 8)) > 0.5
        inter, union = pixels(gt) & pixels(pred) & pixels(other), pixels(gt) | pixels(pred) | pixels(other)
        expected = 1.0 if not union else len(inter) / len(union)
        assert oc_iou(gt, [pred, other]) == pytest.approx(expected)


class TestJF:
    @pytest.mark.parametrize("j, f, expected", [([1.0], [1.0], 1.0), ([0.6], [0.8], 0.7),
                                                 ([0.5, 0.7], [0.9, 0.5], 0.65)])
    def test_examples(self, j, f, expected):
        assert jf_mean(j, f) == pytest.approx(expected)

    def test_length_mismatch(self):
        with pytest.raises(ArgumentError):
            jf_mean([0.5], [0.5, 0.6])


def test_summarize():
    records = [{"iou": 1.0, "f": 1.0}, {"iou": 0.6, "f": 0.4}]
    report = summarize(records, oc_ious=[0.8])
    assert report.miou == pytest.approx(0.8)
    assert report.precision_at == {0.5: 1.0, 0.7: 0.5, 0.9: 0.5}
    assert report.jf_mean == pytest.approx(0.75)
    assert report.to_dict()["precision_at"] == {"0.5": 1.0, "0.7": 0.5, "0.9": 0.5}
    assert len(report.frame()) == 2
    with pytest.raises(ArgumentError):
        summarize([], [])
