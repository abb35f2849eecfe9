# modules/baselines.py

"""
Comparison methods that score an image from its detection scores without modelling
their spatial layout. Every score follows one convention: higher means more irregular.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
from scipy.stats import norm
from sklearn.linear_model import LogisticRegression

from config import GLOBAL_CLASSIFIER_C, TOPK_DEFAULT, VARIANCE_FLOOR
from modules.dataset import DatasetManifest, ImageRecord, Status
from modules.errors import DetectorError
from modules.mil_detector import Detector, bag_label, score_proposals

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class UnivariateGaussian:
    mean: float
    variance: float

    def __post_init__(self):
        object.__setattr__(self, "variance", max(float(self.variance), VARIANCE_FLOOR))

    @classmethod
    def fit(cls, values: Sequence[float]) -> "UnivariateGaussian":
        """Maximum-likelihood fit (biased variance)."""
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("cannot fit a Gaussian to no values")
        return cls(mean=float(values.mean()), variance=float(values.var()))

    def pdf(self, x: float) -> float:
        return float(norm.pdf(x, loc=self.mean, scale=np.sqrt(self.variance)))

    def as_dict(self) -> dict:
        return {"mean": self.mean, "variance": self.variance}


def _scores(image: ImageRecord, detector: Optional[Detector] = None) -> np.ndarray:
    if detector is not None:
        image = score_proposals(detector, image)
    return image.scores()


# --- Positive-negative ratio ---

def positive_negative_ratio(image: ImageRecord) -> float:
    """(#positive + 1) / (#negative + 1); a score counts as positive when > 0."""
    scores = image.scores()
    positives = int(np.sum(scores > 0))
    return (positives + 1) / (len(scores) - positives + 1)


def pn_ratio_score(model_reg: UnivariateGaussian, model_other: UnivariateGaussian, image: ImageRecord) -> float:
    r = positive_negative_ratio(image)
    return -max(model_reg.pdf(r), model_other.pdf(r))


# --- Global linear classifier ---

def train_global_classifier(manifest: DatasetManifest, c: float = GLOBAL_CLASSIFIER_C) -> Detector:
    """
    L2-regularized logistic regression on whole-image features (regular = +1,
    other = -1). Stands in for a linear SVM: only the decision value f is used.
    """
    train = manifest.train_records()
    missing = [r.id for r in train if r.global_feature is None]
    if missing:
        raise DetectorError(f"global features missing for {len(missing)} training image(s), e.g. '{missing[0]}'")
    X = np.vstack([r.global_feature for r in train]).astype(np.float64)
    y = np.array([bag_label(r) for r in train])
    if len(np.unique(y)) < 2:
        raise DetectorError(f"class '{manifest.class_name}': global classifier needs regular and other images")
    clf = LogisticRegression(C=c, solver="lbfgs", max_iter=1000)
    clf.fit(X, y)
    # classes_ is sorted, so coef_ points towards +1 (regular).
    return Detector(w=clf.coef_[0].astype(np.float64), b=float(clf.intercept_[0]), kind="global")


def global_linear_score(classifier: Detector, image: ImageRecord) -> float:
    """-|f(I)| on the global feature: decision values near 0 are the most irregular."""
    if image.global_feature is None:
        raise DetectorError(f"image '{image.id}' has no global feature")
    f = float(classifier.decision(image.global_feature.astype(np.float64)))
    return -abs(f)


# --- MIL detector based ---

def mil_max_score(image: ImageRecord, detector: Optional[Detector] = None) -> float:
    """-|max proposal score|."""
    return -abs(float(np.max(_scores(image, detector))))


def mil_max_gaussian_score(g_reg: UnivariateGaussian, g_other: UnivariateGaussian, image: ImageRecord,
                           detector: Optional[Detector] = None) -> float:
    """-max of the two Gaussian densities at the image's max proposal score."""
    top = float(np.max(_scores(image, detector)))
    return -max(g_reg.pdf(top), g_other.pdf(top))


def mil_topk_score(image: ImageRecord, k: int = TOPK_DEFAULT, detector: Optional[Detector] = None) -> float:
    """-|mean of the top-min(k, count) proposal scores|."""
    scores = np.sort(_scores(image, detector))[::-1][:k]
    return -abs(float(np.mean(scores)))


# --- Fitting the Gaussian baselines on the train split ---

def fit_status_gaussians(manifest: DatasetManifest, statistic) -> Dict[Status, UnivariateGaussian]:
    """MLE Gaussians of a per-image statistic over regular and other training images."""
    fitted = {}
    for status in (Status.REGULAR, Status.OTHER):
        values = [statistic(r) for r in manifest.train_records() if r.status == status]
        if not values:
            raise DetectorError(f"class '{manifest.class_name}' has no {status.value} training images")
        fitted[status] = UnivariateGaussian.fit(values)
        logger.debug("%s Gaussian for '%s': %s", status.value, manifest.class_name, fitted[status].as_dict())
    return fitted