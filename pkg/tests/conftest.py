# tests/conftest.py

import json

import numpy as np
import pytest

from config import SynthConfig
from modules.dataset import BoundingBox, ImageRecord, Proposal, Split, Status
from modules.synthetic import generate


def _random_boxes(rng, n, width=100.0, height=100.0, min_side=5.0, max_side=40.0):
    w = rng.uniform(min_side, max_side, n)
    h = rng.uniform(min_side, max_side, n)
    x1 = rng.uniform(0.0, width - w)
    y1 = rng.uniform(0.0, height - h)
    return np.column_stack([x1, y1, x1 + w, y1 + h])


def _make_record(record_id, boxes, scores=None, features=None, status=Status.REGULAR, split=Split.TEST,
                 width=100.0, height=100.0, class_name="cls", global_feature=None):
    proposals = []
    for i, box in enumerate(boxes):
        feature = None if features is None else np.asarray(features[i], dtype=np.float32)
        score = None if scores is None else float(scores[i])
        proposals.append(Proposal(box=BoundingBox(*(float(v) for v in box)), feature=feature, score=score))
    return ImageRecord(
        id=record_id,
        class_name=class_name,
        status=status,
        width=width,
        height=height,
        proposals=tuple(proposals),
        global_feature=None if global_feature is None else np.asarray(global_feature, dtype=np.float32),
        split=split,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def random_boxes():
    """Factory: (rng, n) -> (n, 4) boxes inside a 100x100 image."""
    return _random_boxes


@pytest.fixture
def make_record():
    """Factory building an ImageRecord from box/score/feature arrays."""
    return _make_record


@pytest.fixture
def random_scored_image():
    """Factory: (rng, image_id, n, loc=0.0) -> an ImageRecord with n random boxes and N(loc, 1) scores."""
    def factory(rng, image_id, n, loc=0.0, **kwargs):
        boxes = _random_boxes(rng, n)
        return _make_record(image_id, boxes, scores=rng.normal(loc, 1.0, n), **kwargs)
    return factory


@pytest.fixture
def write_jsonl(tmp_path):
    """Writes a list of dicts as JSON lines and returns the path."""
    def writer(objs, name="dataset.jsonl"):
        path = tmp_path / name
        with open(path, "w", encoding="utf-8") as f:
            for obj in objs:
                f.write(obj if isinstance(obj, str) else json.dumps(obj))
                f.write("\n")
        return str(path)
    return writer


@pytest.fixture(scope="session")
def small_synth_cfg():
    return SynthConfig(seed=7, images_per_status=30, test_images_per_status=30,
                       proposals_per_image=20, feature_dim=8)


@pytest.fixture(scope="session")
def small_manifest(small_synth_cfg):
    return generate(small_synth_cfg)
