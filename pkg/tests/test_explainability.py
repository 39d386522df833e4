import numpy as np
import pytest

from floodgt import gt_model as gt
from floodgt.errors import TrainingDivergence, ValidationError
from floodgt.explainability import oat_sensitivity, permutation_importance
from floodgt.graph_construction import build_knn_graph
from floodgt.positional_encoding import compute_pe, normalized_laplacian
from floodgt.sampling import DataSplit


def trained_setup(n=120, leak=True, extra_noise=False, seed=0, train_seed=1):
    """Train a small model; optionally leak the label as a feature column.

    With a leak the labels are random coin flips, so the leaked column is the
    only learnable signal; otherwise the labels follow a linear rule in the
    base columns.
    """
    rng = np.random.default_rng(seed)
    base = rng.uniform(-1, 1, size=(n, 2))
    if leak:
        labels = rng.integers(0, 2, size=n).astype(np.int8)
    else:
        labels = (base[:, 0] + 0.5 * base[:, 1] > 0).astype(np.int8)
    columns = [base]
    names = ["f1", "f2"]
    if leak:
        columns.append(labels[:, None].astype(np.float64))
        names.append("leak")
    if extra_noise:
        columns.append(rng.normal(size=(n, 1)))
        names.append("noise")
    features = np.hstack(columns)
    graph = build_knn_graph(features + rng.normal(scale=1e-9, size=features.shape), k=5)
    pe = compute_pe(normalized_laplacian(graph), k_pe=2)
    ids = np.arange(n)
    split = DataSplit(train=ids[: int(0.7 * n)], val=ids[int(0.7 * n) : int(0.85 * n)],
                      test=ids[int(0.85 * n) :], provenance={})
    config = gt.GTConfig(num_eigenvectors=2, k_neighbours=5, num_heads=2,
                         hidden_dim=8, num_layers=1, dropout=0.0,
                         learning_rate=0.05, max_epochs=60, patience=20,
                         seed=train_seed)
    params, _ = gt.train(graph, features, pe, labels, split, config)
    return params, graph, features, pe, labels, names


EVAL_MASK = np.arange(120)


def test_leaked_feature_ranks_first():
    params, graph, features, pe, labels, names = trained_setup(leak=True)
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=30, seed=3)
    assert report.ranking()[0] == "leak"
    assert not report.no_signal
    assert abs(report.importance.sum() - 1.0) < 1e-9


@pytest.mark.parametrize("seed", range(5))
def test_noise_feature_below_threshold(seed):
    params, graph, features, pe, labels, names = trained_setup(
        leak=True, extra_noise=True, seed=10 + seed, train_seed=20 + seed
    )
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=30, seed=seed)
    idx = report.names.index("noise")
    assert report.importance[idx] < report.threshold
    assert report.ci_low[idx] < 0.02  # ci_low ~ 0 for pure noise


def test_threshold_counts_pe_columns():
    params, graph, features, pe, labels, names = trained_setup()
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=5, seed=1)
    assert report.threshold == 1.0 / (features.shape[1] + pe.k)
    assert len(report.names) == features.shape[1] + pe.k
    assert report.names[-1] == "pe_2"


def test_ablated_column_importance_exactly_zero():
    params, graph, features, pe, labels, names = trained_setup()
    params.w_in[1, :] = 0.0  # the model provably never reads column f2
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=10, seed=2)
    idx = report.names.index("f2")
    assert report.raw_mean_drop[idx] == 0.0
    assert report.importance[idx] == 0.0


def test_constant_model_flags_no_signal():
    params, graph, features, pe, labels, names = trained_setup()
    params.w_in[:, :] = 0.0  # output independent of all inputs
    for layer in params.layers:
        for head in layer.heads:
            head.w_q[:] = 0.0
            head.w_k[:] = 0.0
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=5, seed=4)
    assert report.no_signal
    np.testing.assert_array_equal(report.importance, 0.0)


def test_importance_invariant_to_feature_order():
    params, graph, features, pe, labels, names = trained_setup(leak=True)
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=40, seed=5)
    # swap the two base columns consistently everywhere (params included)
    swapped = features[:, [1, 0, 2]]
    params2 = params.copy()
    params2.w_in[[0, 1], :] = params2.w_in[[1, 0], :]
    report2 = permutation_importance(params2, graph, swapped, pe, labels,
                                     EVAL_MASK,
                                     feature_names=["f2", "f1", "leak"],
                                     n_perm=40, seed=5)
    a = dict(zip(report.names, report.raw_mean_drop))
    b = dict(zip(report2.names, report2.raw_mean_drop))
    # same columns, same seeds: identical drop statistics per name
    for name in ("leak",):
        assert a[name] == pytest.approx(b[name], abs=1e-12)
    assert report.ranking()[0] == report2.ranking()[0] == "leak"


def test_ci_brackets_importance():
    params, graph, features, pe, labels, names = trained_setup(extra_noise=True)
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=25, seed=6)
    assert np.all(report.ci_low <= report.importance + 1e-15)
    assert np.all(report.importance <= report.ci_high + 1e-15)


def test_single_class_mask_errors():
    params, graph, features, pe, labels, names = trained_setup()
    only_pos = np.nonzero(labels == 1)[0]
    with pytest.raises(ValidationError, match="both classes"):
        permutation_importance(params, graph, features, pe, labels, only_pos,
                               feature_names=names)


def test_importance_csv(tmp_path):
    params, graph, features, pe, labels, names = trained_setup()
    report = permutation_importance(params, graph, features, pe, labels,
                                    EVAL_MASK, feature_names=names,
                                    n_perm=5, seed=7)
    path = tmp_path / "imp.csv"
    report.write_csv(path)
    lines = path.read_text().strip().splitlines()
    assert lines[0].startswith("feature,importance,ci_low,ci_high")
    assert len(lines) == 1 + len(report.names)


# ---------------------------------------------------------------------- #
# OAT sensitivity
# ---------------------------------------------------------------------- #


BASE = gt.GTConfig(num_eigenvectors=2, k_neighbours=5, num_heads=2, hidden_dim=8,
                   num_layers=1, dropout=0.1, learning_rate=0.01, seed=9)


def analytic_pipeline(config):
    """Stub standing in for train+evaluate: smooth functions of the config."""
    return {
        "auc": 0.9 - 0.5 * abs(config.learning_rate - 0.01) - 0.01 * config.num_layers,
        "moran_i": 0.5 + 0.02 * config.k_neighbours,
        "geary_c": 0.6 - 0.01 * config.num_eigenvectors,
    }


def test_baseline_only_sweep_gives_zero_deltas():
    report = oat_sensitivity(
        BASE,
        {"learning_rate": [0.01], "k_neighbours": [5]},
        analytic_pipeline,
    )
    for row in report.rows:
        assert row["max_abs_delta_auc"] == 0.0
        assert row["max_abs_delta_moran"] == 0.0
        assert row["max_abs_delta_geary"] == 0.0


def test_deltas_and_ordering():
    report = oat_sensitivity(
        BASE,
        {
            "k_neighbours": [5, 7],          # moves moran by 0.04, auc by 0
            "learning_rate": [0.0, 0.05],    # moves auc by 0.005 and 0.02
        },
        analytic_pipeline,
    )
    assert [r["parameter"] for r in report.rows] == ["learning_rate", "k_neighbours"]
    lr_row = report.rows[0]
    assert lr_row["max_abs_delta_auc"] == pytest.approx(0.02)
    knn_row = report.rows[1]
    assert knn_row["max_abs_delta_moran"] == pytest.approx(0.04)


def test_divergent_sweep_point_recorded_as_missing():
    def flaky(config):
        if config.learning_rate > 1.0:
            raise TrainingDivergence("boom")
        return analytic_pipeline(config)

    report = oat_sensitivity(BASE, {"learning_rate": [0.02, 5.0]}, flaky)
    row = report.rows[0]
    assert row["n_missing"] == 1
    assert row["max_abs_delta_auc"] == pytest.approx(0.005)


def test_unknown_parameter_errors():
    with pytest.raises(ValidationError, match="unknown hyperparameter"):
        oat_sensitivity(BASE, {"nope": [1]}, analytic_pipeline)


def test_zero_learning_rate_matches_untrained_model():
    # lr = 0 leaves parameters at their seeded initialization, so the sweep
    # delta equals |baseline AUC - untrained AUC| computed directly
    rng = np.random.default_rng(30)
    n = 80
    features = rng.uniform(-1, 1, size=(n, 3))
    labels = (features[:, 0] > 0).astype(np.int8)
    graph = build_knn_graph(features, k=4)
    pe = compute_pe(normalized_laplacian(graph), k_pe=2)
    ids = np.arange(n)
    split = DataSplit(train=ids[:56], val=ids[56:68], test=ids[68:], provenance={})
    base_config = gt.GTConfig(num_eigenvectors=2, k_neighbours=4, num_heads=2,
                              hidden_dim=8, num_layers=1, dropout=0.0,
                              learning_rate=0.05, max_epochs=40, patience=15, seed=31)
    from floodgt.metrics import auc_roc

    def pipeline(config):
        params, _ = gt.train(graph, features, pe, labels, split, config)
        probs = gt.forward(graph, features, pe, params)
        return {"auc": auc_roc(probs[split.test], labels[split.test]),
                "moran_i": 0.0, "geary_c": 0.0}

    report = oat_sensitivity(base_config, {"learning_rate": [0.0]}, pipeline)
    untrained = gt.init_params(base_config, n_features=3)
    probs0 = gt.forward(graph, features, pe, untrained)
    auc0 = auc_roc(probs0[split.test], labels[split.test])
    baseline_auc = report.baseline["auc"]
    assert report.rows[0]["max_abs_delta_auc"] == pytest.approx(abs(baseline_auc - auc0), abs=1e-12)
