# modules/pipeline.py

import logging
import os
import re
from contextlib import contextmanager
from dataclasses import replace
from typing import Callable, Dict, List, Mapping, Optional, Sequence

from config import METHODS, PipelineConfig
from modules import baselines, gp_irregularity as gp
from modules.dataset import DatasetManifest, ImageRecord, Status, load_dataset, load_scores, save_dataset, save_scores
from modules.errors import DetectorError, StageError
from modules.evaluation import EvalReport, evaluate, save_comparison, save_report_json, save_roc_csv
from modules.mil_detector import (
    bag_accuracy, load_detector, max_score, save_detector, score_manifest, train_detector,
)
from modules.synthetic import generate
from utils import default_log_callback, derive_seed, parallel_map

logger = logging.getLogger(__name__)

GP_METHODS = ("gp", "gp-inter")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "_"


class ArtifactLayout:
    """Where each stage reads and writes its files."""

    def __init__(self, models_dir: str, outputs_dir: str):
        self.models_dir = models_dir
        self.outputs_dir = outputs_dir

    def detector(self, class_name: str) -> str:
        return os.path.join(self.models_dir, _slug(class_name), "detector.json")

    def global_classifier(self, class_name: str) -> str:
        return os.path.join(self.models_dir, _slug(class_name), "global.json")

    def gp_model(self, class_name: str, status: Status, use_inner: bool = True) -> str:
        prefix = "gp" if use_inner else "gp-inter"
        return os.path.join(self.models_dir, _slug(class_name), f"{prefix}-{status.value}.npz")

    def scored_dataset(self) -> str:
        return os.path.join(self.outputs_dir, "scored.jsonl")

    def scores(self, method: str) -> str:
        return os.path.join(self.outputs_dir, f"scores-{method}.csv")

    def report(self, method: str) -> str:
        return os.path.join(self.outputs_dir, f"report-{method}.json")

    def roc(self, method: str) -> str:
        return os.path.join(self.outputs_dir, f"roc-{method}.csv")


@contextmanager
def stage(name: str):
    """Re-raises any failure inside the block as a StageError naming the stage."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


class IrregularityPipeline:
    """
    Runs the stages synth -> detect-train -> score-proposals -> gp-fit -> score -> eval.

    Every stage reads and writes files only, so each one can be rerun on its own.
    Per-image work is spread over `cfg.jobs` threads; outputs keep dataset order.
    """

    def __init__(self, cfg: PipelineConfig, log_callback: Optional[Callable] = None,
                 progress_callback: Optional[Callable] = None):
        """
        Args:
            cfg: Pipeline settings
            log_callback: Optional callback(message, level); defaults to this module's logger
            progress_callback: Optional callback(current, total, message)
        """
        self.cfg = cfg
        self.layout = ArtifactLayout(cfg.paths.models, cfg.paths.outputs)
        self.log = log_callback or default_log_callback(logger)
        self.progress = progress_callback or (lambda current, total, msg="": None)

    # --- synth ---

    def synthesize(self, out_path: str) -> DatasetManifest:
        with stage("synth"):
            manifest = generate(self.cfg.synth, jobs=self.cfg.jobs)
            save_dataset(manifest, out_path)
            self.log(f"✅ Wrote {len(manifest)} synthetic images to {out_path}", "info")
            return manifest

    # --- detect-train ---

    def train_detectors(self, dataset_path: str, train_mil: bool = True) -> None:
        """
        Trains one MIL detector per class and, when the train split carries global
        features, the global linear classifier used by the `global` baseline.
        Classes train on `cfg.jobs` threads; files are written in class order.
        """
        with stage("detect-train"):
            per_class = load_dataset(dataset_path).by_class()
            sequential = self.cfg.jobs <= 1 or len(per_class) <= 1

            def train_class(item):
                name, manifest = item
                detector = classifier = None
                if train_mil:
                    train_cfg = replace(self.cfg.train, seed=derive_seed(self.cfg.train.seed, name))
                    progress = (lambda e, n, msg: self.progress(e, n, f"{name}: {msg}")) if sequential else None
                    detector = train_detector(manifest, train_cfg, progress_callback=progress)
                if all(r.global_feature is not None for r in manifest.train_records()):
                    classifier = baselines.train_global_classifier(manifest)
                return name, manifest, detector, classifier

            trained = parallel_map(train_class, list(per_class.items()), self.cfg.jobs)
            for i, (name, manifest, detector, classifier) in enumerate(trained):
                if detector is not None:
                    save_detector(detector, self.layout.detector(name))
                    accuracy = bag_accuracy(detector, manifest.train_records())
                    self.log(f"✅ Detector for '{name}' trained (train bag accuracy {accuracy:.3f})", "info")
                if classifier is not None:
                    save_detector(classifier, self.layout.global_classifier(name))
                else:
                    self.log(f"No global features for '{name}'; skipping the global classifier", "warning")
                self.progress(i + 1, len(per_class), f"trained '{name}'")

    # --- score-proposals ---

    def score_proposals(self, dataset_path: str, out_path: str) -> DatasetManifest:
        with stage("score-proposals"):
            manifest = load_dataset(dataset_path)
            scored = []
            for name, part in manifest.by_class().items():
                detector = load_detector(self.layout.detector(name))
                scored.extend(score_manifest(detector, part, jobs=self.cfg.jobs).records)
            by_id = {r.id: r for r in scored}
            result = manifest.with_records(by_id[r.id] for r in manifest.records)
            save_dataset(result, out_path)
            self.log(f"✅ Scored proposals of {len(result)} images", "info")
            return result

    # --- gp-fit ---

    def fit_gp(self, scored_path: str, use_inner: Optional[bool] = None) -> None:
        gp_cfg = self.cfg.gp if use_inner is None else replace(self.cfg.gp, use_inner_kernel=use_inner)
        with stage("gp-fit"):
            per_class = load_dataset(scored_path).by_class()
            fitted = parallel_map(lambda manifest: gp.build_models(manifest, gp_cfg, log_callback=self.log),
                                  list(per_class.values()), self.cfg.jobs)
            for i, (name, (model_regular, model_other)) in enumerate(zip(per_class, fitted)):
                gp.save_gp_model(model_regular, self.layout.gp_model(name, Status.REGULAR, gp_cfg.use_inner_kernel))
                gp.save_gp_model(model_other, self.layout.gp_model(name, Status.OTHER, gp_cfg.use_inner_kernel))
                self.progress(i + 1, len(per_class), f"GP models for '{name}'")
            self.log(f"✅ Fitted GP models for {len(per_class)} class(es)", "info")

    # --- score ---

    def _class_scorer(self, method: str, manifest: DatasetManifest) -> Callable[[ImageRecord], float]:
        """Prepares whatever `method` needs for one class and returns a per-image scorer."""
        name = manifest.class_name
        if method in GP_METHODS:
            use_inner = method == "gp"
            model_regular = gp.load_gp_model(self.layout.gp_model(name, Status.REGULAR, use_inner))
            model_other = gp.load_gp_model(self.layout.gp_model(name, Status.OTHER, use_inner))
            n = self.cfg.gp.top_n
            return lambda image: gp.irregularity_score(model_regular, model_other, image, n)
        if method == "pnratio":
            g = baselines.fit_status_gaussians(manifest, baselines.positive_negative_ratio)
            return lambda image: baselines.pn_ratio_score(g[Status.REGULAR], g[Status.OTHER], image)
        if method == "global":
            path = self.layout.global_classifier(name)
            if not os.path.exists(path):
                raise DetectorError(f"no global classifier for '{name}' at {path}; run detect-train first")
            classifier = load_detector(path)
            return lambda image: baselines.global_linear_score(classifier, image)
        if method == "milmax":
            return baselines.mil_max_score
        if method == "milmaxgauss":
            g = baselines.fit_status_gaussians(manifest, max_score)
            return lambda image: baselines.mil_max_gaussian_score(g[Status.REGULAR], g[Status.OTHER], image)
        if method == "miltopk":
            k = self.cfg.topk
            return lambda image: baselines.mil_topk_score(image, k)
        raise ValueError(f"unknown method '{method}'")

    def score(self, scored_path: str, method: str, out_path: str) -> Dict[str, float]:
        """Writes one irregularity score per test image (higher = more irregular)."""
        with stage("score"):
            manifest = load_dataset(scored_path)
            per_class = manifest.by_class()
            results: Dict[str, float] = {}
            for i, (name, part) in enumerate(per_class.items()):
                scorer = self._class_scorer(method, part)
                tests = part.test_records()
                values = parallel_map(scorer, tests, self.cfg.jobs)
                results.update(zip((r.id for r in tests), values))
                self.progress(i + 1, len(per_class), f"{method}: scored '{name}'")
            ordered = [(r.id, results[r.id]) for r in manifest.test_records()]
            save_scores(ordered, out_path)
            self.log(f"✅ {method}: wrote {len(ordered)} scores to {out_path}", "info")
            return dict(ordered)

    # --- eval ---

    def evaluate(self, dataset_path: str, scores_path: str, method: str) -> EvalReport:
        with stage("eval"):
            manifest = load_dataset(dataset_path)
            report = evaluate(manifest, load_scores(scores_path))
            save_report_json(report, self.layout.report(method))
            save_roc_csv(report, self.layout.roc(method))
            self.log(f"✅ {method}: mAP {report.map:.4f}", "info")
            return report

    def compare(self, reports: Mapping[str, EvalReport], stem: str = "comparison"):
        """Writes the AP table of `reports` as <stem>.txt, .csv and .xlsx in the outputs directory."""
        with stage("eval"):
            table = save_comparison(reports, self.layout.outputs_dir, stem=stem)
            self.log(f"Table written to {self.layout.outputs_dir}/{stem}.*", "info")
            return table

    # --- run ---

    def methods(self) -> List[str]:
        return list(METHODS) if self.cfg.method == "all" else [self.cfg.method]

    def run(self) -> Dict[str, EvalReport]:
        """
        Executes every stage the configuration selects and returns one report per method.
        """
        cfg = self.cfg
        cfg.check_paths()
        dataset_path = cfg.paths.dataset
        methods = self.methods()

        if cfg.synthesize:
            self.synthesize(dataset_path)

        needs_global = "global" in methods
        if cfg.use_planted_scores:
            scored_path = dataset_path
            if needs_global:
                self.train_detectors(dataset_path, train_mil=False)
        else:
            self.train_detectors(dataset_path)
            scored_path = self.layout.scored_dataset()
            self.score_proposals(dataset_path, scored_path)

        for method in GP_METHODS:
            if method in methods:
                self.fit_gp(scored_path, use_inner=(method == "gp"))

        reports: Dict[str, EvalReport] = {}
        for method in methods:
            scores_path = self.layout.scores(method)
            self.score(scored_path, method, scores_path)
            reports[method] = self.evaluate(dataset_path, scores_path, method)

        if len(reports) > 1:
            self.compare(reports)
        return reports


def run_pipeline(cfg: PipelineConfig, log_callback: Optional[Callable] = None,
                 progress_callback: Optional[Callable] = None) -> EvalReport:
    """
    Runs the configured pipeline. Returns the report of the selected method; with
    method "all" every method is scored and the `gp` report is returned.
    """
    reports = IrregularityPipeline(cfg, log_callback, progress_callback).run()
    return reports[cfg.method if cfg.method != "all" else METHODS[0]]


def parse_named_paths(items: Sequence[str]) -> Dict[str, str]:
    """Turns `name=path` (or bare `path`, named by its file stem) arguments into a dict."""
    named: Dict[str, str] = {}
    for item in items:
        if "=" in item:
            name, path = item.split("=", 1)
        else:
            path = item
            name = os.path.splitext(os.path.basename(item))[0]
            if name.startswith("scores-"):
                name = name[len("scores-"):]
        named[name] = path
    return named
