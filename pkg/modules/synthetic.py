# modules/synthetic.py

"""
Synthetic benchmark with known irregular images.

Every image carries one object box. A varying share of its proposals are jittered
copies of that box, the rest are background boxes. Planted scores follow the
status of the image:

  regular    slope * iou(proposal, object) + offset + noise
  other      a constant negative level + noise, wherever the proposal is
  irregular  as regular with positive scores scaled down slightly, then one half of
             the object is "damaged": a fraction of the positive proposals
             overlapping that half trade scores with background proposals away
             from the object. The damaged part reads negative next to intact
             copies, and its evidence turns up scattered across the image.

The displacement keeps the image's multiset of scores, so counts and means of
positive proposals stay close to those of regular images; what changes is where
the positive scores sit relative to each other.

Proposal features are e1 * score + isotropic noise, so a linear max-pooled
detector can recover the planted scores from the features alone.
"""

import logging
import math
from typing import Dict, List, Optional

import numpy as np

from config import (
    SYNTH_BACKGROUND_SCALE,
    SYNTH_DAMAGE_SCALE,
    SYNTH_JITTER_RANGE,
    SYNTH_OBJECT_SCALE,
    SYNTH_OBJECT_SHARE,
    SYNTH_OTHER_SCORE,
    SYNTH_SCORE_OFFSET,
    SYNTH_SCORE_SLOPE,
    SynthConfig,
)
from modules.dataset import BoundingBox, DatasetManifest, ImageRecord, Proposal, Split, Status
from modules.geometry import pairwise_chi2_overlap, pairwise_intersections, pairwise_iou
from utils import derive_seed, parallel_map

logger = logging.getLogger(__name__)

# (split, status) blocks in the order records are emitted.
_LAYOUT = (
    (Split.TRAIN, Status.REGULAR),
    (Split.TRAIN, Status.OTHER),
    (Split.TEST, Status.REGULAR),
    (Split.TEST, Status.IRREGULAR),
    (Split.TEST, Status.OTHER),
)


def _object_box(rng: np.random.Generator, width: float, height: float) -> np.ndarray:
    w = rng.uniform(*SYNTH_OBJECT_SCALE) * width
    h = rng.uniform(*SYNTH_OBJECT_SCALE) * height
    x1 = rng.uniform(0.0, width - w)
    y1 = rng.uniform(0.0, height - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def _jittered_copy(rng: np.random.Generator, obj: np.ndarray, sigma: float, width: float, height: float) -> np.ndarray:
    w, h = obj[2] - obj[0], obj[3] - obj[1]
    box = obj + rng.normal(0.0, sigma, 4) * np.array([w, h, w, h])
    box = np.clip(box, 0.0, [width, height, width, height])
    if box[2] <= box[0] or box[3] <= box[1]:
        return obj.copy()
    return box


def _background_box(rng: np.random.Generator, width: float, height: float) -> np.ndarray:
    w = rng.uniform(*SYNTH_BACKGROUND_SCALE) * width
    h = rng.uniform(*SYNTH_BACKGROUND_SCALE) * height
    x1 = rng.uniform(0.0, width - w)
    y1 = rng.uniform(0.0, height - h)
    return np.array([x1, y1, x1 + w, y1 + h])


def _proposal_boxes(rng: np.random.Generator, obj: np.ndarray, count: int, width: float, height: float) -> np.ndarray:
    """Jittered object copies and background boxes, shuffled."""
    low = max(1, round(SYNTH_OBJECT_SHARE[0] * count))
    high = max(low, min(count - 1, round(SYNTH_OBJECT_SHARE[1] * count)))
    n_obj = int(rng.integers(low, high + 1))
    sigma = rng.uniform(*SYNTH_JITTER_RANGE)
    boxes = [_jittered_copy(rng, obj, sigma, width, height) for _ in range(n_obj)]
    boxes += [_background_box(rng, width, height) for _ in range(count - n_obj)]
    return np.vstack(boxes)[rng.permutation(count)]


def damaged_region(rng: np.random.Generator, obj: np.ndarray) -> np.ndarray:
    """One half (left, right, top or bottom) of the object box."""
    x1, y1, x2, y2 = obj
    mx, my = 0.5 * (x1 + x2), 0.5 * (y1 + y2)
    halves = (
        [x1, y1, mx, y2],
        [mx, y1, x2, y2],
        [x1, y1, x2, my],
        [x1, my, x2, y2],
    )
    return np.array(halves[int(rng.integers(len(halves)))])


def displace_damaged(scores: np.ndarray, boxes: np.ndarray, obj: np.ndarray, region: np.ndarray,
                     fraction: float) -> np.ndarray:
    """
    Swaps scores between damaged and background proposals.

    Candidates are the positively scored proposals intersecting `region`; the
    ceil(fraction * candidates) overlapping it most are damaged. Each trades its score
    with a background proposal, taken in order of increasing overlap with the object.
    Fewer swaps happen when there are not enough non-candidate proposals.
    """
    scores = scores.copy()
    touching = pairwise_intersections(boxes, region[None, :])[:, 0] > 0
    is_candidate = (scores > 0) & touching
    candidates = np.flatnonzero(is_candidate)
    pool = np.flatnonzero(~is_candidate)
    k = min(math.ceil(fraction * candidates.size), pool.size)
    if k == 0:
        return scores
    overlap = pairwise_chi2_overlap(boxes[candidates], region[None, :])[:, 0]
    damaged = candidates[np.argsort(-overlap, kind="stable")[:k]]
    away = pairwise_chi2_overlap(boxes[pool], obj[None, :])[:, 0]
    targets = pool[np.argsort(away, kind="stable")[:k]]
    scores[damaged], scores[targets] = scores[targets], scores[damaged]
    return scores


def _generate_image(cfg: SynthConfig, class_name: str, split: Split, status: Status, index: int) -> ImageRecord:
    rng = np.random.default_rng(derive_seed(cfg.seed, class_name, split.value, status.value, index))
    width, height = cfg.image_size
    P = cfg.proposals_per_image

    obj = _object_box(rng, width, height)
    boxes = _proposal_boxes(rng, obj, P, width, height)
    noise = rng.normal(0.0, cfg.score_noise, P)
    if status == Status.OTHER:
        scores = SYNTH_OTHER_SCORE + noise
    else:
        scores = SYNTH_SCORE_SLOPE * pairwise_iou(boxes, obj[None, :])[:, 0] + SYNTH_SCORE_OFFSET + noise
        if status == Status.IRREGULAR:
            scores = np.where(scores > 0, SYNTH_DAMAGE_SCALE * scores, scores)
            scores = displace_damaged(scores, boxes, obj, damaged_region(rng, obj), cfg.irregular_flip_fraction)

    features = rng.normal(0.0, cfg.feature_noise, (P, cfg.feature_dim))
    features[:, 0] += scores
    features = features.astype(np.float32)
    global_feature = (features.mean(axis=0) + rng.normal(0.0, cfg.feature_noise, cfg.feature_dim)).astype(np.float32)

    proposals = tuple(
        Proposal(box=BoundingBox(*(float(v) for v in box)), feature=feature, score=float(score))
        for box, feature, score in zip(boxes, features, scores)
    )
    return ImageRecord(
        id=f"{class_name}-{split.value}-{status.value}-{index:04d}",
        class_name=class_name,
        status=status,
        width=float(width),
        height=float(height),
        proposals=proposals,
        global_feature=global_feature,
        split=split,
    )


def generate(cfg: SynthConfig, jobs: int = 1) -> DatasetManifest:
    """
    Builds train and test splits for every class in cfg.classes.

    The train split holds `images_per_status` regular and other images (never
    irregular ones); the test split holds `cfg.test_count` images of each of
    regular, irregular and other. Every image draws from its own sub-seed, so the
    output does not depend on `jobs`.
    """
    keys = []
    for class_name in cfg.classes:
        for split, status in _LAYOUT:
            count = cfg.images_per_status if split == Split.TRAIN else cfg.test_count
            keys.extend((class_name, split, status, i) for i in range(count))

    records = parallel_map(lambda key: _generate_image(cfg, *key), keys, jobs)
    class_name = cfg.classes[0] if len(cfg.classes) == 1 else "+".join(sorted(cfg.classes))
    logger.info("Generated %d synthetic image(s) for %d class(es)", len(records), len(cfg.classes))
    return DatasetManifest(class_name=class_name, feature_dim=cfg.feature_dim, records=tuple(records))


def oracle_labels(manifest: DatasetManifest) -> Dict[str, int]:
    """+1 for irregular images, -1 for everything else."""
    return {r.id: (1 if r.status == Status.IRREGULAR else -1) for r in manifest.records}


def status_values(manifest: DatasetManifest, statistic, split: Optional[Split] = Split.TEST) -> Dict[Status, List[float]]:
    """Per-status values of an image statistic, e.g. the max proposal score."""
    grouped: Dict[Status, List[float]] = {}
    for record in manifest.records:
        if split is not None and record.split != split:
            continue
        grouped.setdefault(record.status, []).append(float(statistic(record)))
    return grouped
