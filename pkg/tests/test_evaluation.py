# tests/test_evaluation.py

import json

import numpy as np
import openpyxl
import pandas as pd
import pytest
from sklearn.metrics import auc as auc_from_curve

from modules.dataset import DatasetManifest, Split, Status
from modules.errors import EvaluationError
from modules.evaluation import (
    average_precision, comparison_table, evaluate, evaluation_labels, format_table, load_report_json,
    operating_points, roc_auc, save_comparison, save_report_json,
)


def _brute_force_ap(labels, scores):
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    precisions = []
    for depth in range(1, len(order) + 1):
        prefix = [labels[i] for i in order[:depth]]
        if prefix[-1] == 1:
            precisions.append(prefix.count(1) / depth)
    return sum(precisions) / len(precisions)


def _brute_force_auc(labels, scores):
    pos = [s for l, s in zip(labels, scores) if l == 1]
    neg = [s for l, s in zip(labels, scores) if l == -1]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _random_instance(rng, with_ties=False):
    n = int(rng.integers(2, 13))
    labels = rng.choice([-1, 1], n)
    labels[0], labels[1] = 1, -1
    labels = rng.permutation(labels)
    scores = rng.integers(0, 4, n).astype(float) if with_ties else rng.normal(size=n)
    return labels, scores


def _test_image(make_record, record_id, status, class_name="cls", split=Split.TEST):
    return make_record(record_id, [[0, 0, 10, 10]], scores=[0.0], status=status, split=split,
                       class_name=class_name)


class TestAveragePrecision:
    def test_examples(self):
        assert average_precision([1, 1, -1, -1], [4, 3, 2, 1]) == 1.0
        assert average_precision([1, -1], [1, 2]) == 0.5
        assert average_precision([1, -1, 1], [3, 2, 1]) == pytest.approx(5 / 6)

    def test_ties_keep_input_order(self):
        assert average_precision([-1, 1], [1.0, 1.0]) == 0.5
        assert average_precision([1, -1], [1.0, 1.0]) == 1.0

    def test_matches_prefix_oracle(self, rng):
        for trial in range(100):
            labels, scores = _random_instance(rng, with_ties=trial % 2 == 1)
            assert average_precision(labels, scores) == pytest.approx(_brute_force_ap(labels, scores), abs=1e-12)

    def test_invariant_to_increasing_transforms(self, rng):
        for _ in range(50):
            labels, scores = _random_instance(rng)
            value = average_precision(labels, scores)
            assert average_precision(labels, np.exp(scores)) == pytest.approx(value, abs=1e-12)
            assert average_precision(labels, 3 * scores - 7) == pytest.approx(value, abs=1e-12)
            assert 0.0 < value <= 1.0

    def test_no_positives(self):
        with pytest.raises(EvaluationError, match="positive"):
            average_precision([-1, -1], [1.0, 2.0])

    @pytest.mark.parametrize("labels, scores", [
        ([1, 0], [1.0, 2.0]),
        ([1, -1], [1.0, float("nan")]),
        ([1, -1, 1], [1.0, 2.0]),
    ])
    def test_invalid_input(self, labels, scores):
        with pytest.raises(EvaluationError):
            average_precision(labels, scores)


class TestRocAuc:
    def test_examples(self):
        assert roc_auc([1, 1, -1], [3, 2, 1])[0] == 1.0
        assert roc_auc([1, -1, 1, -1], [1, 1, 1, 1])[0] == 0.5
        assert roc_auc([1, -1, 1, -1], [4, 3, 2, 1])[0] == 0.75

    def test_matches_pairwise_oracle(self, rng):
        for trial in range(100):
            labels, scores = _random_instance(rng, with_ties=trial % 2 == 1)
            assert roc_auc(labels, scores)[0] == pytest.approx(_brute_force_auc(labels, scores), abs=1e-12)

    def test_negated_scores_complement(self, rng):
        for _ in range(50):
            labels, scores = _random_instance(rng)
            assert roc_auc(labels, scores)[0] + roc_auc(labels, -scores)[0] == pytest.approx(1.0, abs=1e-12)

    def test_roc_is_monotone_from_origin_to_corner(self, rng):
        for trial in range(30):
            labels, scores = _random_instance(rng, with_ties=trial % 2 == 1)
            points = np.array(roc_auc(labels, scores)[1])
            assert tuple(points[0]) == (0.0, 0.0)
            assert tuple(points[-1]) == (1.0, 1.0)
            assert np.all(np.diff(points, axis=0) >= 0)

    def test_area_under_returned_curve(self, rng):
        for _ in range(30):
            labels, scores = _random_instance(rng, with_ties=True)
            auc, roc = roc_auc(labels, scores)
            fpr, tpr = np.array(roc).T
            assert auc_from_curve(fpr, tpr) == pytest.approx(auc, abs=1e-12)

    def test_single_class(self):
        with pytest.raises(EvaluationError):
            roc_auc([1, 1], [0.2, 0.4])


class TestOperatingPoints:
    def test_hand_example(self):
        ids = ["p1", "n1", "p2", "n2", "n3", "p3"]
        labels = [1, -1, 1, -1, -1, 1]
        points = operating_points(ids, labels, [6, 5, 4, 3, 2, 1], fpr=0.2, tpr=0.9)
        assert points.false_negatives == ["p2", "p3"]
        assert points.false_positives == ["n1", "n2", "n3"]

    def test_perfect_ranking_has_no_errors(self):
        points = operating_points(["a", "b", "c"], [1, 1, -1], [3, 2, 1])
        assert points.false_negatives == []
        assert points.false_positives == []


class TestEvaluate:
    def test_labels_cover_the_labeled_test_split(self, make_record):
        records = (
            _test_image(make_record, "r", Status.REGULAR),
            _test_image(make_record, "i", Status.IRREGULAR),
            _test_image(make_record, "o", Status.OTHER),
            _test_image(make_record, "u", Status.UNLABELED),
            _test_image(make_record, "t", Status.REGULAR, split=Split.TRAIN),
        )
        labels = evaluation_labels(DatasetManifest("cls", None, records))
        assert labels == {"r": -1, "i": 1, "o": -1}

    def test_perfect_scorer(self, make_record):
        records = tuple(_test_image(make_record, f"img{i}", status) for i, status in
                        enumerate([Status.REGULAR, Status.IRREGULAR, Status.OTHER, Status.IRREGULAR]))
        scores = {r.id: (1.0 if r.status == Status.IRREGULAR else 0.0) for r in records}
        report = evaluate(DatasetManifest("cls", None, records), scores)
        assert report.map == 1.0
        assert report.per_class["cls"].auc == 1.0
        assert (report.per_class["cls"].positives, report.per_class["cls"].negatives) == (2, 2)

    def test_map_is_the_mean_over_classes(self, make_record):
        records = (
            _test_image(make_record, "a-irr", Status.IRREGULAR, "a"),
            _test_image(make_record, "a-reg", Status.REGULAR, "a"),
            _test_image(make_record, "b-irr", Status.IRREGULAR, "b"),
            _test_image(make_record, "b-oth", Status.OTHER, "b"),
        )
        scores = {"a-irr": 2.0, "a-reg": 1.0, "b-irr": 1.0, "b-oth": 2.0}
        report = evaluate(DatasetManifest("a+b", None, records), scores)
        assert report.per_class["a"].ap == 1.0
        assert report.per_class["b"].ap == 0.5
        assert report.map == 0.75
        assert evaluate(DatasetManifest("a+b", None, records), scores, classes=["b"]).map == 0.5

    def test_missing_score(self, make_record):
        records = (_test_image(make_record, "x", Status.IRREGULAR), _test_image(make_record, "y", Status.OTHER))
        with pytest.raises(EvaluationError, match="'y'"):
            evaluate(DatasetManifest("cls", None, records), {"x": 1.0})

    def test_unknown_class(self, make_record):
        records = (_test_image(make_record, "x", Status.IRREGULAR), _test_image(make_record, "y", Status.OTHER))
        with pytest.raises(EvaluationError, match="dog"):
            evaluate(DatasetManifest("cls", None, records), {"x": 1.0, "y": 0.0}, classes=["dog"])


class TestReports:
    @pytest.fixture
    def reports(self, make_record):
        records = (
            _test_image(make_record, "a-irr", Status.IRREGULAR, "a"),
            _test_image(make_record, "a-reg", Status.REGULAR, "a"),
            _test_image(make_record, "b-irr", Status.IRREGULAR, "b"),
            _test_image(make_record, "b-oth", Status.OTHER, "b"),
        )
        manifest = DatasetManifest("a+b", None, records)
        good = evaluate(manifest, {"a-irr": 2.0, "a-reg": 1.0, "b-irr": 2.0, "b-oth": 1.0})
        poor = evaluate(manifest, {"a-irr": 2.0, "a-reg": 1.0, "b-irr": 1.0, "b-oth": 2.0})
        return {"gp": good, "milmax": poor}

    def test_json_report(self, reports, tmp_path):
        path = tmp_path / "report.json"
        save_report_json(reports["milmax"], str(path))
        raw = json.loads(path.read_text())
        assert raw["map"] == 0.75
        assert raw["per_class"]["b"]["operating_points"]["false_negatives"] == ["b-irr"]
        assert load_report_json(str(path)).to_dict() == reports["milmax"].to_dict()

    def test_comparison_table_layout(self, reports):
        table = comparison_table(reports)
        assert list(table.index) == ["gp", "milmax"]
        assert list(table.columns) == ["a", "b", "mAP"]
        assert table.loc["milmax", "mAP"] == 0.75
        text = format_table(table)
        assert "100.0" in text
        assert "75.0" in text

    def test_save_comparison_writes_all_formats(self, reports, tmp_path):
        save_comparison(reports, str(tmp_path))
        csv = pd.read_csv(tmp_path / "comparison.csv", index_col=0)
        assert csv.loc["gp", "mAP"] == 1.0
        assert (tmp_path / "comparison.txt").read_text().endswith("\n")
        workbook = openpyxl.load_workbook(tmp_path / "comparison.xlsx")
        assert workbook.sheetnames == ["AP", "AUC", "ROC"]
        assert not list(tmp_path.glob("*.partial"))
