# config.py

# This file centralizes the defaults for every stage of the pipeline.
# Values here are used when neither the config file nor a CLI flag sets them.

import os
import sys
from dataclasses import dataclass, field, fields, replace
from typing import Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from modules.errors import ConfigError

# --- File formats ---

# Bumped whenever the on-disk layout of detectors or GP models changes.
FORMAT_VERSION = 1
DETECTOR_FORMAT = "irregularity-detector"
GP_MODEL_FORMAT = "irregularity-gp-model"
SCORE_CSV_COLUMNS = ["id", "score"]
SCORE_FLOAT_FORMAT = "%.9g"

# --- Proposal selection ---

# Top-scored proposals per image used for GP construction and test evaluation.
DEFAULT_TOP_N = 20
# Training images retained per GP model; exact GP cost is cubic in 20 * M.
DEFAULT_MAX_TRAIN_IMAGES = 100

# --- GP hyperparameters ---

REGULAR_MEAN_INIT = 3.0
OTHER_MEAN_INIT = -3.0
KERNEL_WEIGHT_INIT = 0.5
GAMMA_INIT_RANGE = (0.1, 1.0)
GP_MAX_ITERS = 100
GP_GRADIENT_TOL = 1e-6
# Log-space box for gamma, a and b during optimization.
LOG_PARAM_BOUNDS = (-12.0, 8.0)

# Jitter schedule, relative to mean(diag K).
JITTER_RELATIVE_START = 1e-6
JITTER_RELATIVE_MAX = 1e-2
JITTER_GROWTH = 10.0

# --- MIL detector (SGD) ---

SGD_LEARNING_RATE = 0.05
SGD_EPOCHS = 20
SGD_BATCH_SIZE = 8
SGD_WEIGHT_DECAY = 1e-4

# --- Baselines ---

TOPK_DEFAULT = 20
VARIANCE_FLOOR = 1e-12
GLOBAL_CLASSIFIER_C = 1.0

# --- Evaluation operating points ---

OPERATING_FPR = 0.2
OPERATING_TPR = 0.9

# --- Synthetic data ---

SYNTH_IMAGES_PER_STATUS = 100
SYNTH_IMAGE_SIZE = (200.0, 200.0)
SYNTH_PROPOSALS_PER_IMAGE = 40
SYNTH_FEATURE_DIM = 32
SYNTH_SCORE_NOISE = 0.3
SYNTH_FEATURE_NOISE = 0.1
SYNTH_FLIP_FRACTION = 0.6
# Object box side as a fraction of the image side.
SYNTH_OBJECT_SCALE = (0.4, 0.6)
# Share of an image's proposals that are jittered copies of the object.
SYNTH_OBJECT_SHARE = (0.2, 0.6)
# Per-image std of copy edge jitter, as a fraction of the object side.
SYNTH_JITTER_RANGE = (0.03, 0.10)
SYNTH_BACKGROUND_SCALE = (0.1, 0.5)
# Latent score of an object-class proposal: slope * iou(proposal, object) + offset.
SYNTH_SCORE_SLOPE = 3.0
SYNTH_SCORE_OFFSET = -1.0
SYNTH_OTHER_SCORE = -3.0
# Irregular images: positive scores are scaled by this before the damaged part is displaced.
SYNTH_DAMAGE_SCALE = 0.88

# --- Methods ---

METHODS = ("gp", "gp-inter", "pnratio", "global", "milmax", "milmaxgauss", "miltopk")


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings for the max-pooled logistic detector."""
    learning_rate: float = SGD_LEARNING_RATE
    epochs: int = SGD_EPOCHS
    batch_size: int = SGD_BATCH_SIZE
    seed: int = 0
    weight_decay: float = SGD_WEIGHT_DECAY

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        if self.batch_size <= 0:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")


@dataclass(frozen=True)
class GpConfig:
    """Settings for building the regular / other-class GP models."""
    top_n: int = DEFAULT_TOP_N
    max_train_images: int = DEFAULT_MAX_TRAIN_IMAGES
    max_iters: int = GP_MAX_ITERS
    seed: int = 0
    use_inner_kernel: bool = True

    def __post_init__(self):
        if self.top_n <= 0:
            raise ConfigError(f"top_n must be positive, got {self.top_n}")
        if self.max_train_images <= 0:
            raise ConfigError(f"max_train_images must be positive, got {self.max_train_images}")
        if self.max_iters < 0:
            raise ConfigError(f"max_iters must be non-negative, got {self.max_iters}")


@dataclass(frozen=True)
class SynthConfig:
    """Synthetic benchmark settings. Sizes are in pixels."""
    seed: int = 0
    images_per_status: int = SYNTH_IMAGES_PER_STATUS
    image_size: Tuple[float, float] = SYNTH_IMAGE_SIZE
    proposals_per_image: int = SYNTH_PROPOSALS_PER_IMAGE
    feature_dim: int = SYNTH_FEATURE_DIM
    score_noise: float = SYNTH_SCORE_NOISE
    feature_noise: float = SYNTH_FEATURE_NOISE
    irregular_flip_fraction: float = SYNTH_FLIP_FRACTION
    classes: Tuple[str, ...] = ("synthetic",)
    # Test images per status; None reuses images_per_status.
    test_images_per_status: Optional[int] = None

    def __post_init__(self):
        if self.images_per_status <= 0:
            raise ConfigError("images_per_status must be positive")
        if self.test_images_per_status is not None and self.test_images_per_status <= 0:
            raise ConfigError("test_images_per_status must be positive")
        if len(self.image_size) != 2 or min(self.image_size) <= 0:
            raise ConfigError(f"image_size must be two positive numbers, got {self.image_size}")
        if self.proposals_per_image < 2:
            raise ConfigError("proposals_per_image must be at least 2")
        if self.feature_dim <= 0:
            raise ConfigError("feature_dim must be positive")
        if self.score_noise <= 0 or self.feature_noise < 0:
            raise ConfigError("score_noise must be positive and feature_noise non-negative")
        if not 0.0 < self.irregular_flip_fraction < 1.0:
            raise ConfigError("irregular_flip_fraction must lie in (0, 1)")
        if not self.classes:
            raise ConfigError("at least one class name is required")

    @property
    def test_count(self) -> int:
        return self.test_images_per_status or self.images_per_status


@dataclass(frozen=True)
class PathsConfig:
    dataset: str = "data/dataset.jsonl"
    models: str = "models"
    outputs: str = "outputs"


@dataclass(frozen=True)
class PipelineConfig:
    """Everything `run` needs: paths, method selection, seeds and stage settings."""
    paths: PathsConfig = field(default_factory=PathsConfig)
    method: str = "gp"
    # When true the `run` command generates the dataset before training.
    synthesize: bool = True
    # Use planted scores instead of training a detector (synthetic data only).
    use_planted_scores: bool = False
    jobs: int = 1
    topk: int = TOPK_DEFAULT
    train: TrainConfig = field(default_factory=TrainConfig)
    gp: GpConfig = field(default_factory=GpConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def __post_init__(self):
        if self.method not in METHODS and self.method != "all":
            raise ConfigError(f"unknown method '{self.method}'; choose from {', '.join(METHODS)} or all")
        if self.jobs <= 0:
            raise ConfigError(f"jobs must be positive, got {self.jobs}")
        if self.topk <= 0:
            raise ConfigError(f"topk must be positive, got {self.topk}")

    def check_paths(self):
        """Referenced inputs must exist at run start."""
        if not self.synthesize and not os.path.exists(self.paths.dataset):
            raise ConfigError(f"dataset file not found: {self.paths.dataset}")


_SECTIONS = {
    "paths": PathsConfig,
    "train": TrainConfig,
    "gp": GpConfig,
    "synth": SynthConfig,
}


def _build_section(cls, values: dict, section: str):
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    cleaned = {}
    for key, value in values.items():
        # TOML arrays arrive as lists; the frozen configs want tuples.
        cleaned[key] = tuple(value) if isinstance(value, list) else value
    return cls(**cleaned)


def pipeline_config_from_dict(raw: dict) -> PipelineConfig:
    """Builds a PipelineConfig from the parsed TOML document."""
    raw = dict(raw)
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in raw:
            kwargs[section] = _build_section(cls, raw.pop(section), section)
    top_level = raw.pop("pipeline", {})
    if raw:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(raw))}")
    allowed = {"method", "synthesize", "use_planted_scores", "jobs", "topk"}
    unknown = set(top_level) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [pipeline]: {', '.join(sorted(unknown))}")
    kwargs.update(top_level)
    return PipelineConfig(**kwargs)


def load_pipeline_config(path: Optional[str]) -> PipelineConfig:
    """Reads a TOML config file; a missing path yields the defaults."""
    if path is None:
        return PipelineConfig()
    try:
        with open(path, "rb") as f:
            raw = tomllib.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}") from None
    try:
        return pipeline_config_from_dict(raw)
    except TypeError as e:
        raise ConfigError(f"invalid value in {path}: {e}") from None


def override(cfg, **changes):
    """Returns a copy of a frozen config with the non-None changes applied."""
    changes = {k: v for k, v in changes.items() if v is not None}
    return replace(cfg, **changes) if changes else cfg
