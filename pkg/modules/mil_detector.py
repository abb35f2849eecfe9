# modules/mil_detector.py

import json
import logging
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

from config import DETECTOR_FORMAT, FORMAT_VERSION, TrainConfig
from modules.dataset import DatasetManifest, ImageRecord, Proposal, Status
from modules.errors import DetectorError
from utils import atomic_output, parallel_map

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Detector:
    """Linear proposal scorer: score(x) = w·x + b."""
    w: np.ndarray
    b: float
    kind: str = "mil"

    def __post_init__(self):
        if not (np.all(np.isfinite(self.w)) and np.isfinite(self.b)):
            raise DetectorError("detector weights must be finite")

    @property
    def dim(self) -> int:
        return int(self.w.shape[0])

    @classmethod
    def zeros(cls, dim: int, kind: str = "mil") -> "Detector":
        return cls(w=np.zeros(dim, dtype=np.float64), b=0.0, kind=kind)

    def decision(self, features: np.ndarray) -> np.ndarray:
        return features @ self.w + self.b


def _bag_matrix(image: ImageRecord) -> np.ndarray:
    if not image.proposals:
        raise DetectorError(f"image '{image.id}' has no proposals")
    if not image.has_features:
        raise DetectorError(f"image '{image.id}' has proposals without features")
    return image.feature_matrix()


def _bag_max(detector: Detector, X: np.ndarray) -> Tuple[int, float]:
    scores = detector.decision(X)
    # np.argmax returns the first maximum, i.e. ties resolve to ingestion order.
    j = int(np.argmax(scores))
    return j, float(scores[j])


def _loss_and_grad(detector: Detector, X: np.ndarray, y: int):
    j, z = _bag_max(detector, X)
    loss = float(np.logaddexp(0.0, -y * z))
    coef = -y * expit(-y * z)
    return loss, coef * X[j], coef


def bag_loss(detector: Detector, image: ImageRecord, y: int) -> float:
    """log(1 + exp(-y · max_j (w·x_j + b))) for one image (bag) with label y = ±1."""
    X = _bag_matrix(image)
    _, z = _bag_max(detector, X)
    return float(np.logaddexp(0.0, -y * z))


def bag_loss_gradient(detector: Detector, image: ImageRecord, y: int) -> Tuple[np.ndarray, float]:
    """
    Subgradient of `bag_loss` routed through the argmax proposal j*:
    d/dw = -y·σ(-y·z)·x_j*, d/db = -y·σ(-y·z).
    """
    X = _bag_matrix(image)
    _, grad_w, grad_b = _loss_and_grad(detector, X, y)
    return grad_w, float(grad_b)


def bag_label(record: ImageRecord) -> int:
    if record.status == Status.REGULAR:
        return 1
    if record.status == Status.OTHER:
        return -1
    raise DetectorError(f"image '{record.id}' with status '{record.status.value}' has no training label")


def train_detector(manifest: DatasetManifest, cfg: TrainConfig,
                   progress_callback: Optional[Callable] = None,
                   history: Optional[List[float]] = None) -> Detector:
    """
    Learns w and b with shuffled mini-batch SGD on the max-pooled logistic loss.

    Regular training images are positive bags, other-class images negative bags.
    Starts from w = 0, b = 0; the shuffle order is fully determined by cfg.seed.

    Args:
        manifest: Dataset whose train split supplies the bags
        cfg: SGD settings
        progress_callback: Optional callback(epoch, epochs, message) after every epoch
        history: Optional list that receives the mean bag loss of every epoch

    Returns:
        Detector: The trained detector

    Raises:
        DetectorError: if either class is missing from the train split or bags lack features.
    """
    train = manifest.train_records()
    labels = np.array([bag_label(r) for r in train], dtype=np.int64)
    if not np.any(labels == 1) or not np.any(labels == -1):
        raise DetectorError(
            f"class '{manifest.class_name}': training needs both regular and other images "
            f"(got {int(np.sum(labels == 1))} regular, {int(np.sum(labels == -1))} other)"
        )
    bags = [_bag_matrix(r) for r in train]
    dim = bags[0].shape[1]

    w = np.zeros(dim, dtype=np.float64)
    b = 0.0
    rng = np.random.default_rng(cfg.seed)
    n = len(bags)

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            current = Detector(w=w, b=b)
            grad_w = np.zeros(dim, dtype=np.float64)
            grad_b = 0.0
            for i in batch:
                loss, gw, gb = _loss_and_grad(current, bags[i], labels[i])
                epoch_loss += loss
                grad_w += gw
                grad_b += gb
            m = len(batch)
            w = w - cfg.learning_rate * (grad_w / m + cfg.weight_decay * w)
            b = b - cfg.learning_rate * (grad_b / m)

        mean_loss = epoch_loss / n
        if history is not None:
            history.append(mean_loss)
        logger.debug("epoch %d/%d mean bag loss %.6f", epoch + 1, cfg.epochs, mean_loss)
        if progress_callback:
            progress_callback(epoch + 1, cfg.epochs, f"epoch {epoch + 1}: loss {mean_loss:.4f}")

    return Detector(w=w, b=float(b))


def score_proposals(detector: Detector, image: ImageRecord) -> ImageRecord:
    """Returns a copy of the image with every proposal score set to w·x + b."""
    X = _bag_matrix(image)
    if X.shape[1] != detector.dim:
        raise DetectorError(f"image '{image.id}' has {X.shape[1]}-d features, detector expects {detector.dim}")
    scores = detector.decision(X)
    return image.with_proposals(p.with_score(s) for p, s in zip(image.proposals, scores))


def score_manifest(detector: Detector, manifest: DatasetManifest, jobs: int = 1) -> DatasetManifest:
    scored = parallel_map(lambda r: score_proposals(detector, r), manifest.records, jobs)
    return manifest.with_records(scored)


def top_n_proposals(image: ImageRecord, n: int) -> List[Proposal]:
    """The min(n, count) highest-scored proposals, descending; ties keep ingestion order."""
    scores = image.scores()
    order = np.argsort(-scores, kind="stable")[:n]
    return [image.proposals[i] for i in order]


def max_score(image: ImageRecord) -> float:
    return float(np.max(image.scores()))


# --- Persistence ---

def save_detector(detector: Detector, path):
    payload = {
        "format": DETECTOR_FORMAT,
        "version": FORMAT_VERSION,
        "kind": detector.kind,
        "dim": detector.dim,
        "b": float(detector.b),
        "w": [float(v) for v in detector.w],
    }
    with atomic_output(path) as partial:
        with open(partial, "w", encoding="utf-8") as f:
            json.dump(payload, f)


def load_detector(path) -> Detector:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise DetectorError(f"cannot read detector {path}: {e}") from None
    if payload.get("format") != DETECTOR_FORMAT:
        raise DetectorError(f"{path} is not a detector file")
    if payload.get("version") != FORMAT_VERSION:
        raise DetectorError(f"{path}: unsupported detector version {payload.get('version')}")
    w = np.asarray(payload["w"], dtype=np.float64)
    if w.shape != (payload["dim"],):
        raise DetectorError(f"{path}: weight vector length {w.shape[0]} does not match dim {payload['dim']}")
    return Detector(w=w, b=float(payload["b"]), kind=payload.get("kind", "mil"))


def bag_accuracy(detector: Detector, records: Sequence[ImageRecord]) -> float:
    """Fraction of labelled bags whose max-pooled score has the label's sign."""
    hits = [np.sign(_bag_max(detector, _bag_matrix(r))[1]) == bag_label(r) for r in records]
    return float(np.mean(hits))
