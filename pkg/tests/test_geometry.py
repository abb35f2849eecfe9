# tests/test_geometry.py

import numpy as np
import pytest

from modules.dataset import BoundingBox
from modules.geometry import (
    area, chi2_overlap, iou, pairwise_chi2_overlap, pairwise_iou, proposal_repr, proposal_reprs,
)


def _box(row):
    return BoundingBox(*(float(v) for v in row))


class TestArea:
    @pytest.mark.parametrize("coords, expected", [
        ((0, 0, 2, 2), 4.0),
        ((0, 0, 1, 3), 3.0),
        ((0.5, 0.5, 2.5, 1.5), 2.0),
    ])
    def test_examples(self, coords, expected):
        assert area(BoundingBox(*coords)) == pytest.approx(expected)


class TestOverlap:
    def test_iou_examples(self):
        a = BoundingBox(0, 0, 2, 2)
        assert iou(a, a) == 1.0
        assert iou(a, BoundingBox(5, 5, 6, 6)) == 0.0
        assert iou(a, BoundingBox(1, 0, 3, 2)) == pytest.approx(1.0 / 3.0)

    def test_chi2_examples(self):
        a = BoundingBox(0, 0, 2, 2)
        assert chi2_overlap(a, a) == 1.0
        assert chi2_overlap(a, BoundingBox(5, 5, 6, 6)) == 0.0
        assert chi2_overlap(a, BoundingBox(1, 0, 3, 2)) == pytest.approx(0.5)

    def test_touching_boxes_do_not_overlap(self):
        assert chi2_overlap(BoundingBox(0, 0, 1, 1), BoundingBox(1, 0, 2, 1)) == 0.0

    def test_chi2_is_a_function_of_iou(self, rng, random_boxes):
        a_boxes, b_boxes = random_boxes(rng, 1000), random_boxes(rng, 1000)
        for a, b in zip(a_boxes, b_boxes):
            a, b = _box(a), _box(b)
            u = iou(a, b)
            assert chi2_overlap(a, b) == pytest.approx(2 * u / (1 + u), abs=1e-12)
            assert u <= chi2_overlap(a, b) + 1e-15

    def test_chi2_symmetric_and_scale_translation_invariant(self, rng, random_boxes):
        for a, b in zip(random_boxes(rng, 100), random_boxes(rng, 100)):
            value = chi2_overlap(_box(a), _box(b))
            assert chi2_overlap(_box(b), _box(a)) == pytest.approx(value, abs=1e-15)
            moved = chi2_overlap(_box(3 * a + 7), _box(3 * b + 7))
            assert moved == pytest.approx(value, abs=1e-12)
            assert 0.0 <= value <= 1.0

    def test_chi2_gram_is_positive_semidefinite(self, rng, random_boxes):
        for _ in range(50):
            boxes = random_boxes(rng, int(rng.integers(2, 51)))
            K = pairwise_chi2_overlap(boxes, boxes)
            assert np.linalg.eigvalsh(K).min() >= -1e-8

    def test_vectorized_forms_match_scalar(self, rng, random_boxes):
        a_boxes, b_boxes = random_boxes(rng, 12), random_boxes(rng, 9)
        ious = pairwise_iou(a_boxes, b_boxes)
        chis = pairwise_chi2_overlap(a_boxes, b_boxes)
        for i, a in enumerate(a_boxes):
            for j, b in enumerate(b_boxes):
                assert ious[i, j] == pytest.approx(iou(_box(a), _box(b)), abs=1e-12)
                assert chis[i, j] == pytest.approx(chi2_overlap(_box(a), _box(b)), abs=1e-12)


class TestProposalRepr:
    def test_max_proposal_maps_to_one_zero(self):
        s = BoundingBox(10, 20, 30, 60)
        r = proposal_repr(s, s, 100, 100)
        assert (r.iou_to_max, r.center_dist) == (1.0, 0.0)

    def test_opposite_corners(self):
        r = proposal_repr(BoundingBox(0, 0, 10, 10), BoundingBox(90, 90, 100, 100), 100, 100)
        assert r.iou_to_max == 0.0
        assert r.center_dist == pytest.approx(0.9)

    def test_resolution_invariant(self):
        s, m = BoundingBox(5, 5, 40, 30), BoundingBox(20, 10, 60, 50)
        r1 = proposal_repr(s, m, 80, 60)
        r3 = proposal_repr(s.scaled(3), m.scaled(3), 240, 180)
        assert r3.iou_to_max == pytest.approx(r1.iou_to_max, abs=1e-12)
        assert r3.center_dist == pytest.approx(r1.center_dist, abs=1e-12)

    def test_vectorized_reprs_match_scalar(self, rng, random_boxes):
        boxes = random_boxes(rng, 15)
        reprs = proposal_reprs(boxes, 4, 100, 100)
        anchor = _box(boxes[4])
        for row, box in zip(reprs, boxes):
            r = proposal_repr(_box(box), anchor, 100, 100)
            np.testing.assert_allclose(row, r.as_array(), atol=1e-12)
        assert reprs[4, 1] == 0.0
        assert reprs[4, 0] == pytest.approx(1.0)
        assert np.all((reprs >= 0) & (reprs <= 1 + 1e-12))
