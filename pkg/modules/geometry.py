# modules/geometry.py

"""Box arithmetic and the spatial-relation representation of a proposal."""

import math
from dataclasses import dataclass

import numpy as np

from modules.dataset import BoundingBox


@dataclass(frozen=True)
class ProposalRepr:
    """
    Where a proposal sits relative to its image's maximum-scored proposal.

    iou_to_max is the IoU with that proposal; center_dist is the distance between
    the two box centers divided by the image diagonal, so both lie in [0, 1].
    """
    iou_to_max: float
    center_dist: float

    def as_array(self) -> np.ndarray:
        return np.array([self.iou_to_max, self.center_dist], dtype=np.float64)


def area(b: BoundingBox) -> float:
    return (b.x2 - b.x1) * (b.y2 - b.y1)


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    if w <= 0 or h <= 0:
        return 0.0
    return w * h


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (area(a) + area(b) - inter)


def chi2_overlap(a: BoundingBox, b: BoundingBox) -> float:
    """
    2·S(a∩b) / (S(a∩b) + S(a∪b)).

    This is the χ² kernel on box indicator functions, which keeps Gram matrices built
    from it positive semi-definite. Equals 2u / (1 + u) with u = iou(a, b).
    """
    inter = intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    union = area(a) + area(b) - inter
    return 2.0 * inter / (inter + union)


def proposal_repr(s: BoundingBox, s_max: BoundingBox, width: float, height: float) -> ProposalRepr:
    (cx, cy), (mx, my) = s.center, s_max.center
    diagonal = math.hypot(width, height)
    return ProposalRepr(iou_to_max=iou(s, s_max), center_dist=math.hypot(cx - mx, cy - my) / diagonal)


# --- Vectorized forms used for Gram matrix assembly ---

def box_areas(boxes: np.ndarray) -> np.ndarray:
    """Areas of an (N, 4) array of [x1, y1, x2, y2] boxes."""
    return (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])


def pairwise_intersections(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    top_left = np.maximum(boxes_a[:, None, :2], boxes_b[None, :, :2])
    bottom_right = np.minimum(boxes_a[:, None, 2:], boxes_b[None, :, 2:])
    return np.prod(np.clip(bottom_right - top_left, a_min=0.0, a_max=None), axis=2)


def pairwise_iou(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    inter = pairwise_intersections(boxes_a, boxes_b)
    union = box_areas(boxes_a)[:, None] + box_areas(boxes_b)[None, :] - inter
    return inter / union


def pairwise_chi2_overlap(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    inter = pairwise_intersections(boxes_a, boxes_b)
    union = box_areas(boxes_a)[:, None] + box_areas(boxes_b)[None, :] - inter
    return 2.0 * inter / (inter + union)


def proposal_reprs(boxes: np.ndarray, max_index: int, width: float, height: float) -> np.ndarray:
    """
    (N, 2) array of [iou_to_max, center_dist] for every box against boxes[max_index].
    Row-for-row identical to calling `proposal_repr` on each box.
    """
    anchor = boxes[max_index:max_index + 1]
    ious = pairwise_iou(boxes, anchor)[:, 0]
    centers = 0.5 * (boxes[:, :2] + boxes[:, 2:])
    anchor_center = 0.5 * (anchor[0, :2] + anchor[0, 2:])
    dist = np.hypot(centers[:, 0] - anchor_center[0], centers[:, 1] - anchor_center[1])
    return np.column_stack([ious, dist / math.hypot(width, height)])
