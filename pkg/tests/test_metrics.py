import numpy as np
import pytest

from floodgt.errors import ValidationError
from floodgt.metrics import auc_roc, confusion_at, evaluate


def auc_pairwise_oracle(probs, labels):
    """O(n^2) definition: mean over (pos, neg) pairs of 1 / 0.5 / 0."""
    pos = [p for p, y in zip(probs, labels) if y == 1]
    neg = [p for p, y in zip(probs, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def confusion_loop_oracle(probs, labels, threshold):
    tp = tn = fp = fn = 0
    for p, y in zip(probs, labels):
        pred = p > threshold
        if pred and y == 1:
            tp += 1
        elif pred and y == 0:
            fp += 1
        elif not pred and y == 1:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


# ---------------------------------------------------------------------- #
# confusion
# ---------------------------------------------------------------------- #


def test_perfect_predictions():
    labels = np.array([0, 1, 1, 0, 1])
    tp, tn, fp, fn = confusion_at(labels.astype(float), labels)
    assert fp == 0 and fn == 0
    assert tp == 3 and tn == 2


def test_threshold_is_strict():
    probs = np.full(6, 0.5)
    labels = np.array([0, 1, 0, 1, 0, 1])
    tp, tn, fp, fn = confusion_at(probs, labels, threshold=0.5)
    assert tp == 0 and fp == 0  # everything predicted negative at p == 0.5
    assert fn == 3 and tn == 3


def test_confusion_matches_loop_oracle():
    rng = np.random.default_rng(0)
    probs = rng.uniform(size=200)
    labels = rng.integers(0, 2, size=200)
    assert confusion_at(probs, labels, 0.4) == confusion_loop_oracle(probs, labels, 0.4)


def test_confusion_rejects_nonbinary_labels():
    with pytest.raises(ValidationError):
        confusion_at([0.1, 0.9], [0, 2])


# ---------------------------------------------------------------------- #
# AUC
# ---------------------------------------------------------------------- #


def test_auc_perfect_separation():
    probs = np.array([0.9, 0.8, 0.2, 0.1])
    labels = np.array([1, 1, 0, 0])
    assert auc_roc(probs, labels) == 1.0


def test_auc_all_ties_is_half():
    probs = np.full(10, 0.3)
    labels = np.array([1, 0] * 5)
    assert auc_roc(probs, labels) == 0.5


@pytest.mark.parametrize("trial", range(10))
def test_auc_matches_pairwise_oracle(trial):
    rng = np.random.default_rng(100 + trial)
    n = int(rng.integers(10, 60))
    # quantized scores force tie handling through the rank path
    probs = np.round(rng.uniform(size=n), 1)
    labels = rng.integers(0, 2, size=n)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    assert abs(auc_roc(probs, labels) - auc_pairwise_oracle(probs, labels)) < 1e-12


def test_auc_single_class_errors():
    with pytest.raises(ValidationError, match="both classes"):
        auc_roc([0.2, 0.8], [1, 1])


def test_auc_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    probs = rng.uniform(size=80)
    labels = rng.integers(0, 2, size=80)
    labels[0], labels[1] = 0, 1
    base = auc_roc(probs, labels)
    assert abs(auc_roc(np.exp(3.0 * probs), labels) - base) < 1e-12
    assert abs(auc_roc(probs**3 + 2.0, labels) - base) < 1e-12


def test_auc_label_and_score_swap_symmetry():
    rng = np.random.default_rng(2)
    probs = rng.uniform(size=60)
    labels = rng.integers(0, 2, size=60)
    labels[0], labels[1] = 0, 1
    assert abs(auc_roc(1.0 - probs, 1 - labels) - auc_roc(probs, labels)) < 1e-12


# ---------------------------------------------------------------------- #
# full report
# ---------------------------------------------------------------------- #


def test_report_ratios_reproduce_from_confusion():
    rng = np.random.default_rng(3)
    probs = rng.uniform(size=300)
    labels = (probs + rng.normal(scale=0.3, size=300) > 0.5).astype(int)
    if labels.min() == labels.max():
        labels[0] = 1 - labels[0]
    report = evaluate(probs, labels)
    tp, tn, fp, fn = report.confusion
    assert tp + tn + fp + fn == 300
    assert abs(report.sensitivity - tp / (tp + fn)) < 1e-12
    assert abs(report.specificity - tn / (tn + fp)) < 1e-12
    assert abs(report.ppv - tp / (tp + fp)) < 1e-12
    assert abs(report.npv - tn / (tn + fn)) < 1e-12
    assert abs(report.sensitivity + fn / (tp + fn) - 1.0) < 1e-12
    assert abs(report.specificity + fp / (tn + fp) - 1.0) < 1e-12


def test_report_table_csv(tmp_path):
    probs = np.array([0.9, 0.1, 0.8, 0.2])
    labels = np.array([1, 0, 1, 0])
    path = tmp_path / "table.csv"
    evaluate(probs, labels).write_table_csv(path, model_name="GT")
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "model,auc_roc,sensitivity,specificity,ppv,npv"
    assert lines[1].startswith("GT,1.000000,")
