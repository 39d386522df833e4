"""Permutation feature importance and one-parameter-at-a-time sensitivity."""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import TrainingDivergence, ValidationError
from .gt_model import GTConfig, GTParams, forward
from .graph_construction import Graph
from .metrics import auc_roc
from .positional_encoding import LaplacianPE


@dataclass
class ImportanceReport:
    names: list[str]              # factor columns then pe_1..pe_k
    importance: np.ndarray        # normalized, >= 0, sums to 1 unless no_signal
    ci_low: np.ndarray
    ci_high: np.ndarray
    raw_mean_drop: np.ndarray     # unfloored mean metric drops, for audit
    threshold: float              # 1 / number of inputs
    no_signal: bool = False

    def ranking(self) -> list[str]:
        order = np.argsort(-self.importance, kind="stable")
        return [self.names[i] for i in order]

    def write_csv(self, path, comment=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["feature", "importance", "ci_low", "ci_high", "raw_mean_drop", "threshold"]
            )
            for i, name in enumerate(self.names):
                writer.writerow(
                    [name, repr(float(self.importance[i])), repr(float(self.ci_low[i])),
                     repr(float(self.ci_high[i])), repr(float(self.raw_mean_drop[i])),
                     repr(float(self.threshold))]
                )


@dataclass
class SensitivityReport:
    rows: list[dict]  # parameter, max_abs_dauc, max_abs_dmoran, max_abs_dgeary, n_missing
    baseline: dict

    def write_csv(self, path, comment=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(
                ["parameter", "max_abs_delta_auc", "max_abs_delta_moran",
                 "max_abs_delta_geary", "n_missing"]
            )
            for row in self.rows:
                writer.writerow(
                    [row["parameter"], repr(row["max_abs_delta_auc"]),
                     repr(row["max_abs_delta_moran"]), repr(row["max_abs_delta_geary"]),
                     row["n_missing"]]
                )


def permutation_importance(
    params: GTParams,
    graph: Graph,
    features: np.ndarray,
    pe: LaplacianPE,
    labels: np.ndarray,
    eval_mask: np.ndarray,
    feature_names: list[str] | None = None,
    metric=auc_roc,
    n_perm: int = 100,
    n_boot: int = 100,
    seed: int = 0,
) -> ImportanceReport:
    """Mean metric drop per input column under repeated eval-set shuffles.

    Raw factor columns and positional-encoding columns are permuted alike,
    over the evaluation nodes only. Confidence bounds are 2.5/97.5
    percentiles of bootstrap means over the drop sample; means are floored at
    zero and normalized to sum to one. A model whose metric never moves is
    flagged no_signal instead of dividing by zero.
    """
    labels = np.asarray(labels)
    eval_mask = np.asarray(eval_mask, dtype=np.int64)
    if np.unique(labels[eval_mask]).size < 2:
        raise ValidationError("eval mask must contain both classes")
    features = np.asarray(features, dtype=np.float64)
    F = features.shape[1]
    k_pe = pe.k
    if feature_names is None:
        feature_names = [f"f{j + 1}" for j in range(F)]
    names = list(feature_names) + [f"pe_{j + 1}" for j in range(k_pe)]
    n_inputs = F + k_pe

    def evaluate(feat, vectors):
        pe_mod = replace(pe, vectors=vectors)
        probs = forward(graph, feat, pe_mod, params, mode="eval")
        return metric(probs[eval_mask], labels[eval_mask])

    base_metric = evaluate(features, pe.vectors)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xFE11]))
    drops = np.empty((n_inputs, n_perm))
    for c in range(n_inputs):
        for r in range(n_perm):
            feat = features
            vectors = pe.vectors
            shuffled = eval_mask[rng.permutation(eval_mask.size)]
            if c < F:
                feat = features.copy()
                feat[eval_mask, c] = features[shuffled, c]
            else:
                vectors = pe.vectors.copy()
                vectors[eval_mask, c - F] = pe.vectors[shuffled, c - F]
            drops[c, r] = base_metric - evaluate(feat, vectors)

    raw_mean = drops.mean(axis=1)
    boot_rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB007]))
    ci_low = np.empty(n_inputs)
    ci_high = np.empty(n_inputs)
    for c in range(n_inputs):
        resamples = drops[c][boot_rng.integers(0, n_perm, size=(n_boot, n_perm))].mean(axis=1)
        ci_low[c], ci_high[c] = np.percentile(resamples, [2.5, 97.5])

    floored = np.maximum(raw_mean, 0.0)
    total = floored.sum()
    if total <= 0.0:
        return ImportanceReport(
            names=names,
            importance=np.zeros(n_inputs),
            ci_low=np.zeros(n_inputs),
            ci_high=np.zeros(n_inputs),
            raw_mean_drop=raw_mean,
            threshold=1.0 / n_inputs,
            no_signal=True,
        )
    importance = floored / total
    lo = np.maximum(ci_low, 0.0) / total
    hi = np.maximum(ci_high, 0.0) / total
    # the point estimate always sits inside its own interval
    lo = np.minimum(lo, importance)
    hi = np.maximum(hi, importance)
    return ImportanceReport(
        names=names,
        importance=importance,
        ci_low=lo,
        ci_high=hi,
        raw_mean_drop=raw_mean,
        threshold=1.0 / n_inputs,
    )


def oat_sensitivity(base_config: GTConfig, sweeps: dict[str, list],
                    pipeline) -> SensitivityReport:
    """Max absolute metric deviation from baseline for each swept parameter.

    `pipeline` maps a GTConfig to {"auc", "moran_i", "geary_c"}; it is called
    once for the baseline and once per sweep value with every other parameter
    held at its baseline. Sweep points where training diverges are recorded
    as missing and skipped. Rows are ordered by AUC sensitivity, descending.
    """
    baseline = pipeline(base_config)
    rows = []
    for parameter, values in sweeps.items():
        if not hasattr(base_config, parameter):
            raise ValidationError(f"unknown hyperparameter {parameter!r}")
        deltas = {"auc": 0.0, "moran_i": 0.0, "geary_c": 0.0}
        missing = 0
        for value in values:
            config = replace(base_config, **{parameter: value})
            if config == base_config:
                continue  # identical run contributes zero deviation
            try:
                result = pipeline(config)
            except TrainingDivergence:
                missing += 1
                continue
            for key in deltas:
                deltas[key] = max(deltas[key], abs(result[key] - baseline[key]))
        rows.append(
            {
                "parameter": parameter,
                "max_abs_delta_auc": deltas["auc"],
                "max_abs_delta_moran": deltas["moran_i"],
                "max_abs_delta_geary": deltas["geary_c"],
                "n_missing": missing,
            }
        )
    rows.sort(key=lambda r: -r["max_abs_delta_auc"])
    return SensitivityReport(rows=rows, baseline=dict(baseline))
