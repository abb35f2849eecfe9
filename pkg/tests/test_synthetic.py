# tests/test_synthetic.py

from dataclasses import replace

import numpy as np
import pytest

from config import SynthConfig
from modules.dataset import Split, Status
from modules.geometry import pairwise_chi2_overlap
from modules.synthetic import damaged_region, displace_damaged, generate, oracle_labels, status_values


def _max_score(record):
    return float(np.max(record.scores()))


def _top_mean(record, k=20):
    return float(np.mean(np.sort(record.scores())[::-1][:k]))


def _has_conflicting_pair(record, overlap=0.8, magnitude=0.5):
    """True if two strongly overlapping, confidently scored proposals disagree in sign."""
    scores = record.scores()
    boxes = record.boxes()
    confident = np.flatnonzero(np.abs(scores) > magnitude)
    if confident.size < 2:
        return False
    chi2 = pairwise_chi2_overlap(boxes[confident], boxes[confident])
    signs = np.sign(scores[confident])
    return bool(np.any((chi2 > overlap) & (signs[:, None] != signs[None, :])))


@pytest.fixture(scope="module")
def default_manifest():
    return generate(SynthConfig(seed=0))


class TestLayout:
    def test_counts_and_splits(self, small_manifest):
        train = small_manifest.train_records()
        test = small_manifest.test_records()
        assert len(train) == 60
        assert len(test) == 90
        assert {r.status for r in train} == {Status.REGULAR, Status.OTHER}
        assert sum(r.status == Status.IRREGULAR for r in test) == 30
        assert all(len(r.proposals) == 20 for r in small_manifest.records)
        assert small_manifest.feature_dim == 8

    def test_ids_name_the_image(self, small_manifest):
        ids = [r.id for r in small_manifest.records]
        assert len(set(ids)) == len(ids)
        assert ids[0] == "synthetic-train-regular-0000"
        assert "synthetic-test-irregular-0029" in ids

    def test_separate_test_count(self):
        manifest = generate(SynthConfig(images_per_status=4, test_images_per_status=2, proposals_per_image=6,
                                        feature_dim=3, classes=("cat", "dog")))
        assert manifest.class_name == "cat+dog"
        assert len(manifest.train_records()) == 2 * 8
        assert len(manifest.test_records()) == 2 * 6
        assert sorted(manifest.by_class()) == ["cat", "dog"]

    def test_oracle_labels(self, small_manifest):
        labels = oracle_labels(small_manifest)
        assert len(labels) == len(small_manifest)
        assert sum(v == 1 for v in labels.values()) == 30
        assert all(labels[r.id] == (1 if r.status == Status.IRREGULAR else -1) for r in small_manifest.records)

    def test_boxes_inside_the_image(self, small_manifest):
        for record in small_manifest.records:
            boxes = record.boxes()
            assert np.all(boxes[:, :2] >= 0)
            assert np.all(boxes[:, 2] <= record.width) and np.all(boxes[:, 3] <= record.height)


class TestDeterminism:
    def test_same_seed_same_dataset(self, small_synth_cfg, small_manifest):
        assert generate(small_synth_cfg).same_as(small_manifest)

    def test_jobs_do_not_change_the_output(self, small_synth_cfg, small_manifest):
        assert generate(small_synth_cfg, jobs=3).same_as(small_manifest)

    def test_seed_changes_the_output(self, small_synth_cfg, small_manifest):
        other = generate(replace(small_synth_cfg, seed=8))
        assert not other.same_as(small_manifest)


class TestPlantedScores:
    def test_features_carry_the_score(self, small_manifest):
        for record in small_manifest.records:
            np.testing.assert_allclose(record.feature_matrix()[:, 0], record.scores(), atol=0.6)
            assert record.global_feature.shape == (8,)

    def test_top_scores_order_statuses(self, default_manifest):
        means = {status: np.mean(values) for status, values in status_values(default_manifest, _top_mean).items()}
        assert means[Status.REGULAR] > means[Status.IRREGULAR] > means[Status.OTHER]

    def test_max_scores_separate_statuses(self, default_manifest):
        values = status_values(default_manifest, _max_score)

        def mean_and_se(status):
            v = np.asarray(values[status])
            return v.mean(), v.std(ddof=1) / np.sqrt(len(v))

        (reg, reg_se), (irr, irr_se), (oth, oth_se) = (
            mean_and_se(Status.REGULAR), mean_and_se(Status.IRREGULAR), mean_and_se(Status.OTHER))
        assert reg - irr > 3 * np.hypot(reg_se, irr_se)
        assert irr - oth > 3 * np.hypot(irr_se, oth_se)

    def test_only_irregular_images_have_conflicting_overlaps(self, default_manifest):
        rates = {
            status: np.mean([_has_conflicting_pair(r) for r in default_manifest.test_records() if r.status == status])
            for status in (Status.REGULAR, Status.IRREGULAR, Status.OTHER)
        }
        assert rates[Status.IRREGULAR] >= 0.5
        assert rates[Status.REGULAR] <= 0.05
        assert rates[Status.OTHER] == 0.0

    def test_train_split_values_on_request(self, small_manifest):
        values = status_values(small_manifest, _max_score, split=Split.TRAIN)
        assert set(values) == {Status.REGULAR, Status.OTHER}
        assert len(status_values(small_manifest, _max_score, split=None)[Status.REGULAR]) == 60

    def test_irregular_images_keep_the_positive_count(self, default_manifest):
        counts = status_values(default_manifest, lambda r: np.sum(r.scores() > 0))
        regular = np.asarray(counts[Status.REGULAR], dtype=float)
        irregular = np.asarray(counts[Status.IRREGULAR], dtype=float)
        se = np.hypot(regular.std(ddof=1) / np.sqrt(len(regular)), irregular.std(ddof=1) / np.sqrt(len(irregular)))
        assert abs(regular.mean() - irregular.mean()) < 4 * se


class TestDamage:
    REGION = np.array([0.0, 0.0, 10.0, 10.0])
    OBJECT = np.array([0.0, 0.0, 20.0, 10.0])
    BOXES = np.array([[0, 0, 10, 10], [2, 0, 12, 10], [0, 0, 10, 10], [50, 50, 60, 60], [30, 30, 40, 40]],
                     dtype=float)
    SCORES = np.array([2.0, 1.5, -1.0, -0.5, -0.8])

    def test_region_is_half_the_object(self, rng):
        obj = np.array([10.0, 20.0, 50.0, 80.0])
        for _ in range(10):
            region = damaged_region(rng, obj)
            area = (region[2] - region[0]) * (region[3] - region[1])
            assert area == pytest.approx(0.5 * 40 * 60)
            assert region[0] >= obj[0] and region[1] >= obj[1]
            assert region[2] <= obj[2] and region[3] <= obj[3]

    def test_most_overlapping_positives_trade_with_distant_boxes(self):
        out = displace_damaged(self.SCORES, self.BOXES, self.OBJECT, self.REGION, 0.5)
        np.testing.assert_array_equal(out, [-0.5, 1.5, -1.0, 2.0, -0.8])
        out = displace_damaged(self.SCORES, self.BOXES, self.OBJECT, self.REGION, 0.6)
        np.testing.assert_array_equal(out, [-0.5, -0.8, -1.0, 2.0, 1.5])
        np.testing.assert_array_equal(self.SCORES, [2.0, 1.5, -1.0, -0.5, -0.8])

    def test_scores_are_only_moved(self, rng):
        obj = np.array([40.0, 40.0, 140.0, 120.0])
        boxes = np.vstack([obj + rng.normal(0, 4, (12, 4)), rng.uniform(0, 60, (20, 4)) + [0, 0, 60, 60]])
        scores = np.where(np.arange(32) < 12, 1.5, -1.0) + rng.normal(0, 0.3, 32)
        out = displace_damaged(scores, boxes, obj, damaged_region(rng, obj), 0.6)
        np.testing.assert_array_equal(np.sort(out), np.sort(scores))
        assert np.sum(out > 0) == np.sum(scores > 0)
        assert np.any(out != scores)

    def test_nothing_to_displace(self):
        far = np.array([[50, 50, 60, 60]], dtype=float)
        np.testing.assert_array_equal(displace_damaged(np.array([2.0]), far, self.OBJECT, self.REGION, 0.6), [2.0])
        inside = np.array([[0, 0, 10, 10]], dtype=float)
        np.testing.assert_array_equal(displace_damaged(np.array([2.0]), inside, self.OBJECT, self.REGION, 0.6), [2.0])
