"""Binary classification metrics: threshold confusion and rank-based AUC."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class MetricReport:
    auc_roc: float
    sensitivity: float
    specificity: float
    ppv: float
    npv: float
    confusion: tuple[int, int, int, int]  # (tp, tn, fp, fn)
    threshold: float

    def to_json(self) -> dict:
        tp, tn, fp, fn = self.confusion
        return {
            "auc_roc": self.auc_roc,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "ppv": self.ppv,
            "npv": self.npv,
            "confusion": {"tp": tp, "tn": tn, "fp": fp, "fn": fn},
            "threshold": self.threshold,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    def write_table_csv(self, path, model_name: str = "GT", comment=None):
        """One-row summary table: model, AUC-ROC, sensitivity, specificity, PPV, NPV."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["model", "auc_roc", "sensitivity", "specificity", "ppv", "npv"])
            writer.writerow(
                [model_name]
                + [f"{v:.6f}" for v in (self.auc_roc, self.sensitivity,
                                         self.specificity, self.ppv, self.npv)]
            )


def confusion_at(probs, labels, threshold: float = 0.5) -> tuple[int, int, int, int]:
    """Confusion counts with a strict decision rule: prob > threshold is positive."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if not np.all(np.isin(labels, (0, 1))):
        raise ValidationError("labels must be binary 0/1")
    pred = probs > threshold
    pos = labels == 1
    tp = int(np.sum(pred & pos))
    tn = int(np.sum(~pred & ~pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    return tp, tn, fp, fn


def auc_roc(probs, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) with ties counting one half.

    Computed from average ranks in O(n log n); contractually equal to the
    O(n^2) pairwise definition.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    n_neg = int(np.sum(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValidationError("AUC undefined: both classes must be present")
    order = np.argsort(probs, kind="stable")
    sorted_probs = probs[order]
    ranks = np.empty(len(probs), dtype=np.float64)
    i = 0
    while i < len(probs):
        j = i
        while j + 1 < len(probs) and sorted_probs[j + 1] == sorted_probs[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0  # average 1-based rank
        i = j + 1
    rank_sum_pos = float(ranks[labels == 1].sum())
    u = rank_sum_pos - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def _ratio(num: int, den: int) -> float:
    return num / den if den > 0 else math.nan


def evaluate(probs, labels, threshold: float = 0.5) -> MetricReport:
    """Full metric report at the given threshold."""
    tp, tn, fp, fn = confusion_at(probs, labels, threshold)
    return MetricReport(
        auc_roc=auc_roc(probs, labels),
        sensitivity=_ratio(tp, tp + fn),
        specificity=_ratio(tn, tn + fp),
        ppv=_ratio(tp, tp + fp),
        npv=_ratio(tn, tn + fn),
        confusion=(tp, tn, fp, fn),
        threshold=threshold,
    )
