# modules/evaluation.py

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.stats import rankdata
from sklearn.metrics import roc_curve

from config import OPERATING_FPR, OPERATING_TPR
from modules.dataset import DatasetManifest, Status
from modules.errors import EvaluationError
from utils import atomic_output, df_to_csv

logger = logging.getLogger(__name__)


@dataclass
class OperatingPoints:
    """Image ids missed at a fixed false positive rate, and false alarms at a fixed true positive rate."""
    fpr: float
    false_negatives: List[str]
    tpr: float
    false_positives: List[str]


@dataclass
class ClassMetrics:
    ap: float
    auc: float
    roc: List[Tuple[float, float]]
    positives: int
    negatives: int
    operating: Optional[OperatingPoints] = None


@dataclass
class EvalReport:
    per_class: Dict[str, ClassMetrics] = field(default_factory=dict)
    map: float = 0.0

    def to_dict(self) -> dict:
        out = {"map": self.map, "per_class": {}}
        for name, m in self.per_class.items():
            entry = {
                "ap": m.ap,
                "auc": m.auc,
                "positives": m.positives,
                "negatives": m.negatives,
                "roc": [[fpr, tpr] for fpr, tpr in m.roc],
            }
            if m.operating is not None:
                entry["operating_points"] = {
                    "fpr": m.operating.fpr,
                    "false_negatives": m.operating.false_negatives,
                    "tpr": m.operating.tpr,
                    "false_positives": m.operating.false_positives,
                }
            out["per_class"][name] = entry
        return out


def _validate(labels, scores) -> Tuple[np.ndarray, np.ndarray]:
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise EvaluationError(f"labels and scores must be equal-length vectors ({labels.shape} vs {scores.shape})")
    if not np.all(np.isin(labels, (-1, 1))):
        raise EvaluationError("labels must be +1 or -1")
    if not np.all(np.isfinite(scores)):
        raise EvaluationError("scores must be finite")
    return labels, scores


def _ranking(scores: np.ndarray) -> np.ndarray:
    """Indices by descending score; equal scores keep input order."""
    return np.argsort(-scores, kind="stable")


def average_precision(labels: Sequence[int], scores: Sequence[float]) -> float:
    """
    Mean over positives of the precision at that positive's rank (no interpolation).

    Raises:
        EvaluationError: if there are no positives.
    """
    labels, scores = _validate(labels, scores)
    positive = labels[_ranking(scores)] == 1
    n_pos = int(positive.sum())
    if n_pos == 0:
        raise EvaluationError("average precision needs at least one positive")
    hits = np.cumsum(positive)
    ranks = np.arange(1, len(positive) + 1)
    return float(np.sum((hits / ranks)[positive]) / n_pos)


def roc_auc(labels: Sequence[int], scores: Sequence[float]) -> Tuple[float, List[Tuple[float, float]]]:
    """
    AUC as the Mann-Whitney statistic (tied pairs count ½) and the full ROC curve.

    Raises:
        EvaluationError: if only one class is present.
    """
    labels, scores = _validate(labels, scores)
    n_pos = int(np.sum(labels == 1))
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("ROC needs both positive and negative labels")
    ranks = rankdata(scores)
    auc = (float(np.sum(ranks[labels == 1])) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)
    fpr, tpr, _ = roc_curve(labels == 1, scores, drop_intermediate=False)
    return auc, [(float(f), float(t)) for f, t in zip(fpr, tpr)]


def operating_points(ids: Sequence[str], labels: Sequence[int], scores: Sequence[float],
                     fpr: float = OPERATING_FPR, tpr: float = OPERATING_TPR) -> OperatingPoints:
    """
    Walks the ranking from the top. At the deepest cut whose false positive rate is at
    most `fpr`, lists the positives not yet retrieved; at the shallowest cut whose true
    positive rate reaches `tpr`, lists the negatives already retrieved.
    """
    labels, scores = _validate(labels, scores)
    order = _ranking(scores)
    ranked_ids = [ids[i] for i in order]
    positive = labels[order] == 1
    n_pos, n_neg = int(positive.sum()), int((~positive).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("operating points need both positive and negative labels")
    fp = np.cumsum(~positive)
    tp = np.cumsum(positive)

    allowed = np.flatnonzero(fp / n_neg <= fpr + 1e-12)
    cut = int(allowed[-1]) + 1 if allowed.size else 0
    missed = [ranked_ids[i] for i in range(cut, len(order)) if positive[i]]

    reached = np.flatnonzero(tp / n_pos >= tpr - 1e-12)
    depth = int(reached[0]) + 1
    alarms = [ranked_ids[i] for i in range(depth) if not positive[i]]
    return OperatingPoints(fpr=fpr, false_negatives=missed, tpr=tpr, false_positives=alarms)


def evaluation_labels(manifest: DatasetManifest) -> Dict[str, int]:
    """+1 for irregular test images, -1 for regular and other; unlabeled images are left out."""
    return {
        r.id: (1 if r.status == Status.IRREGULAR else -1)
        for r in manifest.test_records()
        if r.status != Status.UNLABELED
    }


def evaluate(manifest: DatasetManifest, scores_by_id: Mapping[str, float],
             classes: Optional[Sequence[str]] = None) -> EvalReport:
    """
    Per-class AP / AUC / ROC on each class's test split, and mAP over classes.

    Raises:
        EvaluationError: if a test image has no score.
    """
    classes = list(classes) if classes else manifest.class_names()
    per_class = manifest.by_class()
    report = EvalReport()
    for name in classes:
        if name not in per_class:
            raise EvaluationError(f"class '{name}' has no records")
        labels_by_id = evaluation_labels(per_class[name])
        missing = [i for i in labels_by_id if i not in scores_by_id]
        if missing:
            raise EvaluationError(f"no score for test image '{missing[0]}' ({len(missing)} missing)")
        ids = list(labels_by_id)
        labels = np.array([labels_by_id[i] for i in ids])
        scores = np.array([scores_by_id[i] for i in ids], dtype=np.float64)
        auc, roc = roc_auc(labels, scores)
        report.per_class[name] = ClassMetrics(
            ap=average_precision(labels, scores),
            auc=auc,
            roc=roc,
            positives=int(np.sum(labels == 1)),
            negatives=int(np.sum(labels == -1)),
            operating=operating_points(ids, labels, scores),
        )
        logger.info("Class '%s': AP %.4f, AUC %.4f", name, report.per_class[name].ap, auc)
    report.map = float(np.mean([m.ap for m in report.per_class.values()]))
    return report


# --- Report output ---

def save_report_json(report: EvalReport, path):
    with atomic_output(path) as partial:
        with open(partial, "w", encoding="utf-8", newline="\n") as f:
            json.dump(report.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")


def load_report_json(path) -> EvalReport:
    with open(path, "r", encoding="utf-8") as f:
        raw = json.load(f)
    report = EvalReport(map=raw["map"])
    for name, m in raw["per_class"].items():
        op = m.get("operating_points")
        report.per_class[name] = ClassMetrics(
            ap=m["ap"], auc=m["auc"], roc=[tuple(p) for p in m["roc"]],
            positives=m["positives"], negatives=m["negatives"],
            operating=OperatingPoints(**op) if op else None,
        )
    return report


def roc_frame(report: EvalReport, method: Optional[str] = None) -> pd.DataFrame:
    rows = []
    for name, m in report.per_class.items():
        for fpr, tpr in m.roc:
            row = {"class": name, "fpr": fpr, "tpr": tpr}
            if method is not None:
                row = {"method": method, **row}
            rows.append(row)
    columns = (["method"] if method is not None else []) + ["class", "fpr", "tpr"]
    return pd.DataFrame(rows, columns=columns)


def save_roc_csv(report: EvalReport, path):
    df_to_csv(roc_frame(report), path)


def comparison_table(reports: Mapping[str, EvalReport], metric: str = "ap") -> pd.DataFrame:
    """Methods as rows, classes as columns, plus a final mean column (mAP for AP)."""
    classes = sorted({c for r in reports.values() for c in r.per_class})
    rows = []
    for method, report in reports.items():
        values = {c: getattr(report.per_class[c], metric) if c in report.per_class else math.nan for c in classes}
        values["mAP" if metric == "ap" else f"mean {metric.upper()}"] = float(np.nanmean(list(values.values())))
        rows.append({"Methods": method, **values})
    return pd.DataFrame(rows).set_index("Methods")


def format_table(table: pd.DataFrame) -> str:
    """Plain-text table with values in percent and one decimal."""
    return (table * 100.0).to_string(float_format=lambda v: f"{v:.1f}")


def save_comparison(reports: Mapping[str, EvalReport], out_dir, stem: str = "comparison"):
    """Writes <stem>.txt, <stem>.csv and a multi-sheet <stem>.xlsx (AP, AUC, ROC)."""
    ap_table = comparison_table(reports, "ap")
    auc_table = comparison_table(reports, "auc")
    base = f"{out_dir}/{stem}"

    with atomic_output(f"{base}.txt") as partial:
        with open(partial, "w", encoding="utf-8", newline="\n") as f:
            f.write(format_table(ap_table))
            f.write("\n")
    with atomic_output(f"{base}.csv") as partial:
        ap_table.to_csv(partial, lineterminator="\n")

    roc = pd.concat([roc_frame(r, method) for method, r in reports.items()], ignore_index=True)
    # Handle, not path: the writer rejects a ".partial" extension.
    with atomic_output(f"{base}.xlsx") as partial:
        with open(partial, "wb") as f, pd.ExcelWriter(f, engine="openpyxl") as writer:
            ap_table.to_excel(writer, sheet_name="AP")
            auc_table.to_excel(writer, sheet_name="AUC")
            roc.to_excel(writer, sheet_name="ROC", index=False)
    return ap_table
