# modules/gp_irregularity.py

"""
Gaussian-process generative models over region detection scores.

Each class gets two independent models, one fitted on regular training images and one
on other-class images. A model's covariance between two proposals is

    k(s, s') = a · [same image] · chi2_overlap(s, s') + b · k_inter(φ(s), φ(s'))

where φ places a proposal relative to its image's maximum-scored proposal. Test images
are scored by the conditional density of their top-n proposal scores given the training
scores; an image that fits neither model is irregular.
"""

import json
import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import LinAlgError, cho_solve, cholesky, solve_triangular
from scipy.optimize import minimize

from config import (
    FORMAT_VERSION, GAMMA_INIT_RANGE, GP_GRADIENT_TOL, GP_MAX_ITERS, GP_MODEL_FORMAT,
    JITTER_GROWTH, JITTER_RELATIVE_MAX, JITTER_RELATIVE_START, KERNEL_WEIGHT_INIT,
    LOG_PARAM_BOUNDS, OTHER_MEAN_INIT, REGULAR_MEAN_INIT, GpConfig,
)
from modules.dataset import BoundingBox, DatasetManifest, ImageRecord, Status
from modules.errors import DatasetError, GramFactorizationError
from modules.geometry import ProposalRepr, chi2_overlap, pairwise_chi2_overlap, proposal_reprs
from modules.mil_detector import top_n_proposals
from utils import atomic_output, default_log_callback, derive_seed

logger = logging.getLogger(__name__)

# Order of the optimized parameters in gradients and optimizer vectors.
PARAM_NAMES = ("mu", "log_gamma_iou", "log_gamma_dist", "log_a", "log_b")
_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class GpHyperParams:
    """
    mu is the constant mean; gamma weights the two φ coordinates in k_inter; a and b
    weight the inner- and inter-image terms. jitter is added to covariance diagonals
    and is never optimized; None means 1e-6 · mean(diag K), resolved at first use.
    With use_inner False the inner-image term is dropped and a is ignored.
    """
    mu: float
    gamma: np.ndarray
    a: float
    b: float
    jitter: Optional[float] = None
    use_inner: bool = True

    def __post_init__(self):
        gamma = np.asarray(self.gamma, dtype=np.float64)
        object.__setattr__(self, "gamma", gamma)
        if gamma.shape != (2,) or np.any(gamma <= 0):
            raise ValueError(f"gamma must be two positive weights, got {gamma}")
        if self.a <= 0 or self.b <= 0:
            raise ValueError(f"a and b must be positive, got a={self.a}, b={self.b}")
        if self.jitter is not None and self.jitter < 0:
            raise ValueError(f"jitter must be non-negative, got {self.jitter}")

    def to_vector(self) -> np.ndarray:
        """[mu, log γ1, log γ2, log a, log b]."""
        return np.array([self.mu, *np.log(self.gamma), np.log(self.a), np.log(self.b)])

    def from_vector(self, theta: np.ndarray) -> "GpHyperParams":
        return replace(self, mu=float(theta[0]), gamma=np.exp(theta[1:3]),
                       a=float(np.exp(theta[3])), b=float(np.exp(theta[4])))

    def as_dict(self) -> dict:
        return {"mu": self.mu, "gamma": self.gamma.tolist(), "a": self.a, "b": self.b,
                "jitter": self.jitter, "use_inner": self.use_inner}


def initial_hyperparams(status: Status, seed: int = 0, use_inner: bool = True) -> GpHyperParams:
    """Mean +3 for the regular model and -3 for the other-class model, a = b = 0.5, random γ."""
    mu = REGULAR_MEAN_INIT if status == Status.REGULAR else OTHER_MEAN_INIT
    rng = np.random.default_rng(seed)
    gamma = rng.uniform(*GAMMA_INIT_RANGE, size=2)
    return GpHyperParams(mu=mu, gamma=gamma, a=KERNEL_WEIGHT_INIT, b=KERNEL_WEIGHT_INIT, use_inner=use_inner)


# --- Training proposals ---

@dataclass(frozen=True, eq=False)
class TrainingProposalSet:
    """
    Retained training proposals, grouped by image and stored contiguously.

    image_index[i] indexes image_ids; reprs is (N, 2), boxes (N, 4), scores (N,).
    """
    image_ids: Tuple[str, ...]
    image_index: np.ndarray
    reprs: np.ndarray
    boxes: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        n = self.scores.shape[0]
        if n == 0:
            raise ValueError("training proposal set is empty")
        if self.reprs.shape != (n, 2) or self.boxes.shape != (n, 4) or self.image_index.shape != (n,):
            raise ValueError("training proposal arrays have inconsistent shapes")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("training proposal scores must be finite")

    def __len__(self):
        return int(self.scores.shape[0])

    @cached_property
    def inner_overlap(self) -> np.ndarray:
        """Block-diagonal matrix of chi2_overlap between proposals of the same image."""
        n = len(self)
        K = np.zeros((n, n))
        for img in np.unique(self.image_index):
            idx = np.flatnonzero(self.image_index == img)
            block = pairwise_chi2_overlap(self.boxes[idx], self.boxes[idx])
            K[np.ix_(idx, idx)] = block
        return K

    @cached_property
    def repr_sqdiffs(self) -> np.ndarray:
        """(2, N, N) squared differences of each φ coordinate."""
        diff = self.reprs[:, None, :] - self.reprs[None, :, :]
        return np.moveaxis(diff ** 2, 2, 0)


def image_proposal_arrays(image: ImageRecord, n: int):
    """
    Top-n proposals of a scored image as (reprs, boxes, scores) arrays, with φ
    measured against the image's own maximum-scored proposal.
    """
    if not image.has_scores:
        raise DatasetError(f"image '{image.id}' has no scored proposals")
    top = top_n_proposals(image, n)
    boxes = np.array([p.box.as_list() for p in top], dtype=np.float64)
    scores = np.array([p.score for p in top], dtype=np.float64)
    reprs = proposal_reprs(boxes, 0, image.width, image.height)
    return reprs, boxes, scores


def build_training_set(records: Sequence[ImageRecord], n: int) -> TrainingProposalSet:
    ids, index, reprs, boxes, scores = [], [], [], [], []
    for i, record in enumerate(records):
        r, b, s = image_proposal_arrays(record, n)
        ids.append(record.id)
        index.append(np.full(len(s), i, dtype=np.int64))
        reprs.append(r)
        boxes.append(b)
        scores.append(s)
    if not ids:
        raise ValueError("no training images")
    return TrainingProposalSet(
        image_ids=tuple(ids),
        image_index=np.concatenate(index),
        reprs=np.vstack(reprs),
        boxes=np.vstack(boxes),
        scores=np.concatenate(scores),
    )


# --- Kernels ---

def k_inter(r1: ProposalRepr, r2: ProposalRepr, gamma) -> float:
    """exp(-½ (φ1 - φ2)ᵀ diag(γ) (φ1 - φ2))."""
    d = r1.as_array() - r2.as_array()
    return float(np.exp(-0.5 * np.sum(np.asarray(gamma) * d * d)))


def k_full(p1: Tuple[str, ProposalRepr, BoundingBox], p2: Tuple[str, ProposalRepr, BoundingBox],
           hyper: GpHyperParams) -> float:
    """Composite covariance of two (image_id, repr, box) proposals; the inner term only within one image."""
    id1, r1, box1 = p1
    id2, r2, box2 = p2
    value = hyper.b * k_inter(r1, r2, hyper.gamma)
    if hyper.use_inner and id1 == id2:
        value += hyper.a * chi2_overlap(box1, box2)
    return value


def inter_matrix(reprs_a: np.ndarray, reprs_b: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    diff = reprs_a[:, None, :] - reprs_b[None, :, :]
    return np.exp(-0.5 * np.einsum("ijk,k->ij", diff ** 2, gamma))


def _raw_gram(train: TrainingProposalSet, hyper: GpHyperParams):
    """Gram matrix without jitter, plus its inter-image part (reused for gradients)."""
    K_inter = np.exp(-0.5 * np.einsum("kij,k->ij", train.repr_sqdiffs, hyper.gamma))
    K = hyper.b * K_inter
    if hyper.use_inner:
        K = K + hyper.a * train.inner_overlap
    return K, K_inter


def _start_jitter(K: np.ndarray, jitter: Optional[float]) -> float:
    if jitter is not None:
        return jitter
    return JITTER_RELATIVE_START * float(np.mean(np.diag(K)))


def factorize(K: np.ndarray, jitter: Optional[float], escalate: bool = True) -> Tuple[np.ndarray, float]:
    """
    Lower Cholesky factor of K + jitter·I.

    On failure the jitter is raised to at least 1e-6·mean(diag K) and multiplied by 10
    until it exceeds 1e-2·mean(diag K).

    Returns:
        (L, jitter_used)

    Raises:
        GramFactorizationError: naming the last jitter tried.
    """
    scale = float(np.mean(np.diag(K)))
    ceiling = JITTER_RELATIVE_MAX * scale
    current = _start_jitter(K, jitter)
    eye = np.eye(K.shape[0])
    while True:
        try:
            return cholesky(K + current * eye, lower=True, check_finite=False), current
        except (LinAlgError, ValueError):
            if not escalate:
                raise GramFactorizationError(f"covariance not factorizable with jitter {current:.3g}", current)
            nxt = max(current * JITTER_GROWTH, JITTER_RELATIVE_START * scale)
            if nxt > ceiling * (1 + 1e-12) or not np.isfinite(nxt):
                raise GramFactorizationError(
                    f"covariance not factorizable; last jitter tried {current:.3g}", current
                )
            logger.warning("Cholesky failed with jitter %.3g; retrying with %.3g", current, nxt)
            current = nxt


def assemble_gram(train: TrainingProposalSet, hyper: GpHyperParams) -> np.ndarray:
    """K[i][j] = k_full(p_i, p_j) with jitter on the diagonal (escalated until K factorizes)."""
    K, _ = _raw_gram(train, hyper)
    _, jitter = factorize(K, hyper.jitter)
    return K + jitter * np.eye(K.shape[0])


# --- Marginal likelihood ---

def log_marginal_likelihood(train: TrainingProposalSet, hyper: GpHyperParams,
                            escalate: bool = True) -> Tuple[float, np.ndarray]:
    """
    log p(f | S, θ) and its gradient over (μ, log γ, log a, log b), jitter held fixed.

    The gradient uses ½ tr((ααᵀ - K⁻¹) ∂K/∂θ) with α = K⁻¹(f - μ1); the log a
    component is zero when the inner-image term is disabled.
    """
    K, K_inter = _raw_gram(train, hyper)
    L, _ = factorize(K, hyper.jitter, escalate=escalate)
    resid = train.scores - hyper.mu
    alpha = cho_solve((L, True), resid, check_finite=False)
    n = len(train)
    value = -0.5 * float(resid @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * _LOG_2PI

    W = np.outer(alpha, alpha) - cho_solve((L, True), np.eye(n), check_finite=False)
    bK = hyper.b * K_inter
    grad = np.zeros(len(PARAM_NAMES))
    grad[0] = float(np.sum(alpha))
    for d in range(2):
        dK = bK * (-0.5 * hyper.gamma[d] * train.repr_sqdiffs[d])
        grad[1 + d] = 0.5 * float(np.sum(W * dK))
    if hyper.use_inner:
        grad[3] = 0.5 * float(np.sum(W * (hyper.a * train.inner_overlap)))
    grad[4] = 0.5 * float(np.sum(W * bK))
    return value, grad


def fit_hyperparameters(train: TrainingProposalSet, init: GpHyperParams,
                        max_iters: int = GP_MAX_ITERS) -> GpHyperParams:
    """
    Maximizes the log marginal likelihood with L-BFGS-B: μ in raw space, γ, a, b in
    log space. The result never has a lower likelihood than `init`; if the optimizer
    stops early the best iterate seen is returned.
    """
    if max_iters == 0:
        return init
    K0, _ = _raw_gram(train, init)
    _, jitter = factorize(K0, init.jitter)
    start = replace(init, jitter=jitter)

    active = [0, 1, 2, 3, 4] if start.use_inner else [0, 1, 2, 4]
    theta0 = start.to_vector()
    best = {"value": -np.inf, "theta": theta0.copy()}

    def objective(x):
        theta = theta0.copy()
        theta[active] = x
        try:
            value, grad = log_marginal_likelihood(train, start.from_vector(theta), escalate=False)
        except GramFactorizationError:
            return 1e20, np.zeros_like(x)
        if value > best["value"]:
            best["value"], best["theta"] = value, theta.copy()
        return -value, -grad[active]

    low, high = LOG_PARAM_BOUNDS
    bounds = [(None, None) if i == 0 else (low, high) for i in active]
    result = minimize(objective, theta0[active], jac=True, method="L-BFGS-B", bounds=bounds,
                      options={"maxiter": max_iters, "gtol": GP_GRADIENT_TOL})
    if not result.success:
        logger.info("Hyperparameter search stopped early (%s); keeping best iterate", result.message)
    fitted = start.from_vector(best["theta"])
    logger.debug("Fitted hyperparameters %s (log marginal likelihood %.4f)", fitted.as_dict(), best["value"])
    return fitted


# --- Fitted model and test-time scoring ---

@dataclass(frozen=True, eq=False)
class GpModel:
    hyper: GpHyperParams
    train: TrainingProposalSet
    chol: np.ndarray
    alpha: np.ndarray

    @classmethod
    def from_hyperparams(cls, train: TrainingProposalSet, hyper: GpHyperParams) -> "GpModel":
        K, _ = _raw_gram(train, hyper)
        L, jitter = factorize(K, hyper.jitter)
        alpha = cho_solve((L, True), train.scores - hyper.mu, check_finite=False)
        return cls(hyper=replace(hyper, jitter=jitter), train=train, chol=L, alpha=alpha)


def fit_gp_model(train: TrainingProposalSet, init: GpHyperParams, max_iters: int = GP_MAX_ITERS) -> GpModel:
    return GpModel.from_hyperparams(train, fit_hyperparameters(train, init, max_iters))


def _test_covariance(hyper: GpHyperParams, reprs: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    K = hyper.b * inter_matrix(reprs, reprs, hyper.gamma)
    if hyper.use_inner:
        K = K + hyper.a * pairwise_chi2_overlap(boxes, boxes)
    return K


def _gaussian_logpdf(resid: np.ndarray, L: np.ndarray) -> float:
    z = solve_triangular(L, resid, lower=True, check_finite=False)
    return -0.5 * float(z @ z) - float(np.sum(np.log(np.diag(L)))) - 0.5 * len(resid) * _LOG_2PI


def conditional_log_likelihood_arrays(model: GpModel, reprs: np.ndarray, boxes: np.ndarray,
                                      scores: np.ndarray, normalize: bool = True) -> float:
    """
    log N(f_t | μ + k_*ᵀα, K_tt - k_*ᵀK⁻¹k_*) for the proposals of one test image.

    The train-test cross covariance k_* holds only the inter-image term, since a test
    image never shares an image with the training set. K_tt includes the inner-image
    term and jitter on its diagonal. With normalize the value is divided by the number
    of test proposals.
    """
    hyper = model.hyper
    k_star = hyper.b * inter_matrix(model.train.reprs, reprs, hyper.gamma)
    mean = hyper.mu + k_star.T @ model.alpha
    V = solve_triangular(model.chol, k_star, lower=True, check_finite=False)
    cov = _test_covariance(hyper, reprs, boxes) - V.T @ V
    cov = 0.5 * (cov + cov.T)
    L, _ = factorize(cov, hyper.jitter)
    value = _gaussian_logpdf(scores - mean, L)
    return value / len(scores) if normalize else value


def conditional_log_likelihood(model: GpModel, test: Sequence[Tuple[ProposalRepr, BoundingBox, float]],
                               normalize: bool = True) -> float:
    """Conditional log-likelihood of (repr, box, score) proposals that all come from one image."""
    reprs = np.array([r.as_array() for r, _, _ in test])
    boxes = np.array([b.as_list() for _, b, _ in test], dtype=np.float64)
    scores = np.array([s for _, _, s in test], dtype=np.float64)
    return conditional_log_likelihood_arrays(model, reprs, boxes, scores, normalize)


def image_log_likelihood(model: GpModel, image: ImageRecord, n: int) -> float:
    reprs, boxes, scores = image_proposal_arrays(image, n)
    return conditional_log_likelihood_arrays(model, reprs, boxes, scores)


def irregularity_score(model_regular: GpModel, model_other: GpModel, image: ImageRecord, n: int) -> float:
    """-max(ll_regular, ll_other): higher means the image fits neither model, i.e. more irregular."""
    reprs, boxes, scores = image_proposal_arrays(image, n)
    ll_regular = conditional_log_likelihood_arrays(model_regular, reprs, boxes, scores)
    ll_other = conditional_log_likelihood_arrays(model_other, reprs, boxes, scores)
    return -max(ll_regular, ll_other)


def joint_log_likelihood(hyper: GpHyperParams, train: TrainingProposalSet, reprs: np.ndarray,
                         boxes: np.ndarray, scores: np.ndarray) -> float:
    """log p(f_r, f_t) for training scores plus one test image, under one set of hyperparameters."""
    test_index = np.full(len(scores), len(train.image_ids), dtype=np.int64)
    joint = TrainingProposalSet(
        image_ids=train.image_ids + ("__test__",),
        image_index=np.concatenate([train.image_index, test_index]),
        reprs=np.vstack([train.reprs, reprs]),
        boxes=np.vstack([train.boxes, boxes]),
        scores=np.concatenate([train.scores, scores]),
    )
    value, _ = log_marginal_likelihood(joint, hyper, escalate=False)
    return value


# --- Building the per-class model pair ---

def select_training_images(records: Sequence[ImageRecord], max_images: int, seed: int) -> List[ImageRecord]:
    """Uniform subsample of at most max_images records, returned in input order."""
    if len(records) <= max_images:
        return list(records)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(records), size=max_images, replace=False))
    return [records[i] for i in keep]


def build_models(manifest: DatasetManifest, cfg: GpConfig,
                 log_callback: Optional[Callable] = None) -> Tuple[GpModel, GpModel]:
    """
    Fits the regular and other-class models of one class from its scored train split.

    Returns:
        (model_regular, model_other)
    """
    log_callback = log_callback or default_log_callback(logger)

    models = []
    for status in (Status.REGULAR, Status.OTHER):
        records = [r for r in manifest.train_records() if r.status == status]
        if not records:
            raise DatasetError(f"class '{manifest.class_name}' has no {status.value} training images")
        seed = derive_seed(cfg.seed, manifest.class_name, status.value)
        chosen = select_training_images(records, cfg.max_train_images, seed)
        train = build_training_set(chosen, cfg.top_n)
        init = initial_hyperparams(status, seed, use_inner=cfg.use_inner_kernel)
        log_callback(f"Fitting {status.value} model for '{manifest.class_name}' on "
                     f"{len(train)} proposals from {len(chosen)} images", "info")
        model = fit_gp_model(train, init, cfg.max_iters)
        log_callback(f"{status.value} model: {json.dumps(model.hyper.as_dict())}", "debug")
        models.append(model)
    return models[0], models[1]


# --- Persistence ---

def save_gp_model(model: GpModel, path):
    """Single .npz file: JSON header (format, version, hyperparameters) plus arrays."""
    header = {"format": GP_MODEL_FORMAT, "version": FORMAT_VERSION, "hyper": model.hyper.as_dict()}
    with atomic_output(path) as partial:
        with open(partial, "wb") as f:
            np.savez(
                f,
                header=np.array(json.dumps(header)),
                image_ids=np.array(model.train.image_ids, dtype=str),
                image_index=model.train.image_index,
                reprs=model.train.reprs,
                boxes=model.train.boxes,
                scores=model.train.scores,
                chol=model.chol,
                alpha=model.alpha,
            )


def load_gp_model(path) -> GpModel:
    try:
        data = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as e:
        raise DatasetError(f"cannot read GP model {path}: {e}") from None
    with data:
        header = json.loads(str(data["header"]))
        if header.get("format") != GP_MODEL_FORMAT:
            raise DatasetError(f"{path} is not a GP model file")
        if header.get("version") != FORMAT_VERSION:
            raise DatasetError(f"{path}: unsupported GP model version {header.get('version')}")
        h = header["hyper"]
        hyper = GpHyperParams(mu=h["mu"], gamma=np.array(h["gamma"]), a=h["a"], b=h["b"],
                              jitter=h["jitter"], use_inner=h["use_inner"])
        train = TrainingProposalSet(
            image_ids=tuple(str(s) for s in data["image_ids"]),
            image_index=data["image_index"],
            reprs=data["reprs"],
            boxes=data["boxes"],
            scores=data["scores"],
        )
        return GpModel(hyper=hyper, train=train, chol=data["chol"], alpha=data["alpha"])
