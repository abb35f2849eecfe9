# modules/dataset.py

import json
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from config import SCORE_CSV_COLUMNS, SCORE_FLOAT_FORMAT
from modules.errors import DatasetError
from utils import atomic_output, df_to_csv, read_frame

logger = logging.getLogger(__name__)


class Status(str, Enum):
    REGULAR = "regular"
    IRREGULAR = "irregular"
    OTHER = "other"
    UNLABELED = "unlabeled"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


TRAINABLE_STATUSES = (Status.REGULAR, Status.OTHER)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in pixel coordinates with strictly positive area."""
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise ValueError(f"degenerate box {coords}")

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> Tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def scaled(self, factor: float) -> "BoundingBox":
        return BoundingBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)


@dataclass(frozen=True, eq=False)
class Proposal:
    """A region proposal with its optional appearance feature and detection score."""
    box: BoundingBox
    feature: Optional[np.ndarray] = None
    score: Optional[float] = None

    def with_score(self, score: float) -> "Proposal":
        return replace(self, score=float(score))

    def same_as(self, other: "Proposal", atol: float = 0.0) -> bool:
        if self.box != other.box:
            return False
        if (self.score is None) != (other.score is None):
            return False
        if self.score is not None and abs(self.score - other.score) > atol:
            return False
        if (self.feature is None) != (other.feature is None):
            return False
        return self.feature is None or np.array_equal(self.feature, other.feature)


@dataclass(frozen=True, eq=False)
class ImageRecord:
    id: str
    class_name: str
    status: Status
    width: float
    height: float
    proposals: Tuple[Proposal, ...]
    global_feature: Optional[np.ndarray] = None
    split: Split = Split.TEST

    @property
    def has_scores(self) -> bool:
        return bool(self.proposals) and all(p.score is not None for p in self.proposals)

    @property
    def has_features(self) -> bool:
        return bool(self.proposals) and all(p.feature is not None for p in self.proposals)

    def scores(self) -> np.ndarray:
        """Proposal scores in ingestion order."""
        if not self.has_scores:
            raise DatasetError(f"record '{self.id}' has unscored proposals")
        return np.array([p.score for p in self.proposals], dtype=np.float64)

    def feature_matrix(self) -> np.ndarray:
        """N x D float64 matrix of proposal features."""
        if not self.has_features:
            raise DatasetError(f"record '{self.id}' has proposals without features")
        return np.vstack([p.feature for p in self.proposals]).astype(np.float64)

    def boxes(self) -> np.ndarray:
        return np.array([p.box.as_list() for p in self.proposals], dtype=np.float64)

    def with_proposals(self, proposals: Sequence[Proposal]) -> "ImageRecord":
        return replace(self, proposals=tuple(proposals))

    def same_as(self, other: "ImageRecord", atol: float = 0.0) -> bool:
        if (self.id, self.class_name, self.status, self.split) != (other.id, other.class_name, other.status, other.split):
            return False
        if (self.width, self.height) != (other.width, other.height):
            return False
        if len(self.proposals) != len(other.proposals):
            return False
        if (self.global_feature is None) != (other.global_feature is None):
            return False
        if self.global_feature is not None and not np.array_equal(self.global_feature, other.global_feature):
            return False
        return all(a.same_as(b, atol) for a, b in zip(self.proposals, other.proposals))


@dataclass(frozen=True, eq=False)
class DatasetManifest:
    """An immutable collection of image records sharing one feature dimensionality."""
    class_name: str
    feature_dim: Optional[int]
    records: Tuple[ImageRecord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        seen = set()
        for record in self.records:
            if record.id in seen:
                raise DatasetError(f"duplicate record id '{record.id}'")
            seen.add(record.id)
            if record.split == Split.TRAIN and record.status not in TRAINABLE_STATUSES:
                raise DatasetError(
                    f"record '{record.id}' has status '{record.status.value}' in the train split; "
                    "only regular and other images may be used for training"
                )

    def __len__(self):
        return len(self.records)

    def split(self, split: Split) -> List[ImageRecord]:
        return [r for r in self.records if r.split == split]

    def train_records(self) -> List[ImageRecord]:
        return self.split(Split.TRAIN)

    def test_records(self) -> List[ImageRecord]:
        return self.split(Split.TEST)

    def with_records(self, records: Iterable[ImageRecord]) -> "DatasetManifest":
        return replace(self, records=tuple(records))

    def class_names(self) -> List[str]:
        return sorted({r.class_name for r in self.records})

    def by_class(self) -> Dict[str, "DatasetManifest"]:
        """One manifest per class, records kept in file order."""
        return {
            name: DatasetManifest(name, self.feature_dim, tuple(r for r in self.records if r.class_name == name))
            for name in self.class_names()
        }

    def same_as(self, other: "DatasetManifest", atol: float = 0.0) -> bool:
        if (self.class_name, self.feature_dim, len(self)) != (other.class_name, other.feature_dim, len(other)):
            return False
        return all(a.same_as(b, atol) for a, b in zip(self.records, other.records))


# --- Ingestion ---

def _clamped_box(raw, width, height):
    """Clamps a raw [x1, y1, x2, y2] list to the image; None if it is unusable."""
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        return None
    try:
        x1, y1, x2, y2 = (float(v) for v in raw)
    except (TypeError, ValueError):
        return None
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        return None
    x1, x2 = min(max(x1, 0.0), width), min(max(x2, 0.0), width)
    y1, y2 = min(max(y1, 0.0), height), min(max(y2, 0.0), height)
    if not (x2 > x1 and y2 > y1):
        return None
    return BoundingBox(x1, y1, x2, y2)


def _vector(raw, dtype, line_no: int, what: str):
    if raw is None:
        return None
    try:
        vector = np.asarray(raw, dtype=dtype)
    except (TypeError, ValueError):
        raise DatasetError(f"line {line_no}: {what} must be a list of numbers") from None
    if not np.all(np.isfinite(vector)):
        raise DatasetError(f"line {line_no}: {what} has non-finite entries")
    return vector


def _parse_record(obj: dict, line_no: int, feature_dim: Optional[int]):
    """
    Turns one decoded JSON object into an ImageRecord.

    Returns:
        (record, feature_dim, dropped) where dropped counts proposals removed
        because their box was degenerate after clamping.
    """
    try:
        record_id = str(obj["id"])
        class_name = str(obj["class"])
        status = Status(obj["status"])
        width = float(obj["width"])
        height = float(obj["height"])
        raw_proposals = obj["proposals"]
        split = Split(obj.get("split", Split.TEST.value))
    except KeyError as e:
        raise DatasetError(f"line {line_no}: missing field {e}") from None
    except (TypeError, ValueError) as e:
        raise DatasetError(f"line {line_no}: invalid field value ({e})") from None
    if not (math.isfinite(width) and math.isfinite(height) and width > 0 and height > 0):
        raise DatasetError(f"line {line_no}: record '{record_id}' has non-positive image size")
    if not isinstance(raw_proposals, list):
        raise DatasetError(f"line {line_no}: 'proposals' must be a list")

    def check_dim(vector, what):
        nonlocal feature_dim
        if vector is None:
            return
        if vector.ndim != 1:
            raise DatasetError(f"line {line_no}: {what} of record '{record_id}' is not a flat vector")
        if feature_dim is None:
            feature_dim = vector.shape[0]
        elif vector.shape[0] != feature_dim:
            raise DatasetError(
                f"record '{record_id}': {what} has length {vector.shape[0]}, expected {feature_dim}"
            )

    global_feature = _vector(obj.get("global_feature"), np.float32, line_no, f"global_feature of record '{record_id}'")
    check_dim(global_feature, "global_feature")

    proposals = []
    dropped = 0
    for raw in raw_proposals:
        if not isinstance(raw, dict):
            raise DatasetError(f"line {line_no}: proposal entries must be objects")
        box = _clamped_box(raw.get("box"), width, height)
        if box is None:
            dropped += 1
            continue
        feature = _vector(raw.get("feature"), np.float32, line_no, f"proposal feature of record '{record_id}'")
        check_dim(feature, "proposal feature")
        score = raw.get("score")
        if score is not None:
            try:
                score = float(score)
            except (TypeError, ValueError):
                raise DatasetError(f"line {line_no}: record '{record_id}' has a non-numeric proposal score") from None
            if not math.isfinite(score):
                raise DatasetError(f"line {line_no}: record '{record_id}' has a non-finite proposal score")
        proposals.append(Proposal(box=box, feature=feature, score=score))

    record = ImageRecord(
        id=record_id,
        class_name=class_name,
        status=status,
        width=width,
        height=height,
        proposals=tuple(proposals),
        global_feature=global_feature,
        split=split,
    )
    return record, feature_dim, dropped


def load_dataset(path) -> DatasetManifest:
    """
    Loads a JSON-lines dataset (one image per line).

    Boxes are clamped to the image; proposals that become degenerate are dropped with
    a warning, and records left without proposals are rejected with a warning listing
    their ids.

    Raises:
        DatasetError: on parse failures (naming the line), feature-length mismatches
            (naming the record), duplicate ids, or irregular images in the train split.
    """
    records = []
    rejected = []
    feature_dim = None
    try:
        f = open(path, "r", encoding="utf-8")
    except OSError as e:
        raise DatasetError(f"cannot open dataset {path}: {e}") from None
    with f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"line {line_no}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict):
                raise DatasetError(f"line {line_no}: expected a JSON object")
            record, feature_dim, dropped = _parse_record(obj, line_no, feature_dim)
            if dropped:
                logger.warning("Record '%s': dropped %d degenerate proposal(s)", record.id, dropped)
            if not record.proposals:
                rejected.append(record.id)
                continue
            records.append(record)

    if rejected:
        logger.warning("Rejected %d record(s) with no valid proposals: %s", len(rejected), ", ".join(rejected))

    class_names = sorted({r.class_name for r in records})
    class_name = class_names[0] if len(class_names) == 1 else "+".join(class_names)
    manifest = DatasetManifest(class_name=class_name, feature_dim=feature_dim, records=tuple(records))
    logger.info("Loaded %d record(s) from %s (D=%s)", len(manifest), path, feature_dim)
    return manifest


def _record_to_json(record: ImageRecord) -> dict:
    def vec(v):
        return None if v is None else [float(x) for x in v]

    return {
        "id": record.id,
        "class": record.class_name,
        "status": record.status.value,
        "split": record.split.value,
        "width": record.width,
        "height": record.height,
        "global_feature": vec(record.global_feature),
        "proposals": [
            {"box": p.box.as_list(), "feature": vec(p.feature), "score": p.score}
            for p in record.proposals
        ],
    }


def save_dataset(manifest: DatasetManifest, path):
    """Writes a manifest in the JSON-lines format read by `load_dataset`."""
    with atomic_output(path) as partial:
        with open(partial, "w", encoding="utf-8", newline="\n") as f:
            for record in manifest.records:
                f.write(json.dumps(_record_to_json(record)))
                f.write("\n")


# --- Score files ---

def save_scores(records: Sequence[Tuple[str, float]], path):
    """
    Writes an `id,score` CSV with one row per image and 9 significant digits.

    Raises:
        DatasetError: if ids repeat.
    """
    df = pd.DataFrame(list(records), columns=SCORE_CSV_COLUMNS)
    if df["id"].duplicated().any():
        dupes = df.loc[df["id"].duplicated(), "id"].tolist()
        raise DatasetError(f"duplicate ids in score output: {', '.join(map(str, dupes[:5]))}")
    df["id"] = df["id"].astype(str)
    df["score"] = df["score"].astype(np.float64)
    df_to_csv(df, path, float_format=SCORE_FLOAT_FORMAT)


def load_scores(path) -> Dict[str, float]:
    """Reads a score CSV written by `save_scores` into an id -> score map."""
    try:
        df = read_frame(path)
    except (OSError, pd.errors.ParserError) as e:
        raise DatasetError(f"cannot read scores from {path}: {e}") from None
    if list(df.columns) != SCORE_CSV_COLUMNS:
        raise DatasetError(f"{path}: expected header {','.join(SCORE_CSV_COLUMNS)}, got {','.join(df.columns)}")
    if df["id"].duplicated().any():
        raise DatasetError(f"{path}: duplicate ids")
    scores = pd.to_numeric(df["score"], errors="coerce").astype(np.float64)
    bad = np.flatnonzero(~np.isfinite(scores.to_numpy()))
    if bad.size:
        # +2: one-based lines after the header.
        row = int(bad[0])
        raise DatasetError(f"{path}: line {row + 2} (id '{df['id'].iloc[row]}') has no valid score")
    return dict(zip(df["id"], scores))
