"""Command-line pipeline: every stage reads and writes serialized artifacts.

Configuration is a single JSON file; flags only select the subcommand and
point at paths. All seeds are explicit in the config, every artifact embeds
the config hash and governing seed, and rerunning any stage with unchanged
inputs reproduces its outputs byte for byte.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .data_ingest import (
    FactorSpec,
    NormalizationParams,
    compute_collinearity,
    filter_collinear,
    load_feature_table,
    min_max_normalize,
    write_feature_table,
)
from .errors import (
    MissingArtifactError,
    NumericalError,
    ParseError,
    TrainingDivergence,
    ValidationError,
)
from .gt_model import GTConfig, GTParams, forward, mc_dropout_predict, train
from .graph_construction import Graph, build_knn_graph, fit_pca
from .mapping import (
    ClassBreaks,
    GridSpec,
    class_area_report,
    classify,
    fit_variogram,
    jenks_breaks,
    ordinary_krige,
    read_asc,
    write_asc,
    write_breaks_json,
    write_class_area_csv,
)
from .metrics import auc_roc, evaluate
from .positional_encoding import LaplacianPE, compute_pe, normalized_laplacian
from .sampling import DataSplit, SplitSpec, balanced_sample
from .scenario_exposure import (
    TrackGeometry,
    apply_scenario,
    load_scenario_spec,
    run_scenario,
    track_exposure,
    write_scenario_spec,
    write_scenario_table_csv,
)
from .spatial_stats import (
    build_weights,
    gearys_c,
    morans_i,
    write_autocorr_json,
    write_moran_scatter_csv,
)

STAGES = ("ingest", "sample", "build-graph", "pe", "train", "predict", "metrics",
          "autocorr", "krige", "classify", "importance", "sensitivity", "scenario",
          "exposure", "report")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_MISSING_ARTIFACT = 4
EXIT_DATA = 5
EXIT_NUMERIC = 6
EXIT_UNEXPECTED = 1


class ConfigError(ValueError):
    """Raised when the run configuration is malformed."""


CONFIG_SCHEMA = {
    "paths": {
        "features_csv": "input point CSV: id,x,y,<factors...>,label",
        "track_geojson": "railway LineString/MultiLineString GeoJSON (optional)",
        "scenarios": "list of scenario spec JSON paths (optional)",
        "output_dir": "artifact directory",
    },
    "factors": "list of {name, kind: continuous|categorical-coded}",
    "keep_features": "factor names exempt from collinearity removal",
    "vif_max": "collinearity threshold (default 10.0)",
    "sampling": {"n_per_class": "int", "ratios": "[train, val, test]", "seed": "int"},
    "variance_target": "PCA cumulative explained-variance target (default 0.95)",
    "model": "GTConfig fields (num_eigenvectors, k_neighbours, num_heads, "
             "hidden_dim, num_layers, dropout, learning_rate, ff_multiplier, "
             "max_epochs, patience, seed, pe_sign_flip)",
    "weights_threshold_m": "spatial-weights distance band (default 2000.0)",
    "grid_cell_m": "kriging cell size in meters",
    "kriging": {"family": "spherical|exponential|gaussian", "n_bins": "int",
                "neighbors": "int"},
    "mc_passes": "stochastic forward passes (default 100)",
    "mc_seed": "int",
    "n_classes": "classification classes (default 5)",
    "importance": {"n_perm": "int", "n_boot": "int", "seed": "int"},
    "sweeps": "hyperparameter name -> list of values (sensitivity stage)",
}


@dataclass
class RunConfig:
    features_csv: str
    output_dir: str
    factors: list[FactorSpec]
    model: GTConfig
    sampling: SplitSpec
    track_geojson: str | None = None
    scenarios: list[str] = field(default_factory=list)
    keep_features: tuple = ()
    vif_max: float = 10.0
    variance_target: float = 0.95
    weights_threshold_m: float = 2000.0
    grid_cell_m: float = 250.0
    kriging_family: str = "spherical"
    kriging_bins: int = 15
    kriging_neighbors: int = 32
    mc_passes: int = 100
    mc_seed: int = 0
    n_classes: int = 5
    importance_n_perm: int = 100
    importance_n_boot: int = 100
    importance_seed: int = 0
    sweeps: dict = field(default_factory=dict)
    crs_note: str = ""
    config_hash: str = ""

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        base = os.path.dirname(os.path.abspath(os.fspath(path)))

        def resolve(p):
            return p if os.path.isabs(p) else os.path.join(base, p)

        try:
            paths = raw["paths"]
            features_csv = resolve(paths["features_csv"])
            output_dir = resolve(paths["output_dir"])
            factors = [FactorSpec(f["name"], f.get("kind", "continuous"))
                       for f in raw["factors"]]
            model = GTConfig.from_json(raw["model"])
            sampling_raw = raw["sampling"]
            sampling = SplitSpec(
                n_per_class=int(sampling_raw["n_per_class"]),
                ratios=tuple(sampling_raw.get("ratios", (0.7, 0.15, 0.15))),
                seed=int(sampling_raw["seed"]),
            )
            kriging = raw.get("kriging", {})
            importance = raw.get("importance", {})
            config = cls(
                features_csv=features_csv,
                output_dir=output_dir,
                factors=factors,
                model=model,
                sampling=sampling,
                track_geojson=(resolve(paths["track_geojson"])
                               if paths.get("track_geojson") else None),
                scenarios=[resolve(p) for p in paths.get("scenarios", [])],
                keep_features=tuple(raw.get("keep_features", ())),
                vif_max=float(raw.get("vif_max", 10.0)),
                variance_target=float(raw.get("variance_target", 0.95)),
                weights_threshold_m=float(raw.get("weights_threshold_m", 2000.0)),
                grid_cell_m=float(raw.get("grid_cell_m", 250.0)),
                kriging_family=kriging.get("family", "spherical"),
                kriging_bins=int(kriging.get("n_bins", 15)),
                kriging_neighbors=int(kriging.get("neighbors", 32)),
                mc_passes=int(raw.get("mc_passes", 100)),
                mc_seed=int(raw.get("mc_seed", 0)),
                n_classes=int(raw.get("n_classes", 5)),
                importance_n_perm=int(importance.get("n_perm", 100)),
                importance_n_boot=int(importance.get("n_boot", 100)),
                importance_seed=int(importance.get("seed", 0)),
                sweeps=dict(raw.get("sweeps", {})),
                crs_note=raw.get("crs_note", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid config: {exc!r}") from exc
        canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"))
        config.config_hash = hashlib.sha256(canonical.encode()).hexdigest()[:12]
        if not os.path.exists(config.features_csv):
            raise ConfigError(f"features_csv does not exist: {config.features_csv}")
        if config.track_geojson and not os.path.exists(config.track_geojson):
            raise ConfigError(f"track_geojson does not exist: {config.track_geojson}")
        for s in config.scenarios:
            if not os.path.exists(s):
                raise ConfigError(f"scenario spec does not exist: {s}")
        return config

    # ---------------------------------------------------------------- #
    # artifact bookkeeping
    # ---------------------------------------------------------------- #

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def provenance(self, seed: int) -> str:
        return f"provenance: config={self.config_hash} seed={seed}"

    def provenance_obj(self, seed: int) -> dict:
        return {"config": self.config_hash, "seed": seed}

    def require(self, *names: str) -> list[str]:
        missing = [n for n in names if not os.path.exists(self.path(n))]
        if missing:
            raise MissingArtifactError(
                "missing artifacts: " + ", ".join(missing)
                + " (run the upstream stages first)"
            )
        return [self.path(n) for n in names]


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_asc_with_meta(grid, path, meta):
    write_asc(grid, path)
    _write_json(f"{path}.meta.json", meta)


def _load_nodes(config: RunConfig):
    return load_feature_table(config.path("nodes.csv"),
                              _selected_factors(config), config.crs_note)


def _selected_factors(config: RunConfig) -> list[FactorSpec]:
    names = _read_json(config.path("selected_features.json"))["selected"]
    by_name = {f.name: f for f in config.factors}
    return [by_name[n] for n in names]


def _load_predictions(config: RunConfig):
    path = config.path("predictions.csv")
    ids, xs, ys, labels, probs, mc_mean, mc_std = [], [], [], [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("id,"):
                continue
            parts = line.strip().split(",")
            ids.append(int(parts[0]))
            xs.append(float(parts[1]))
            ys.append(float(parts[2]))
            labels.append(int(parts[3]))
            probs.append(float(parts[4]))
            mc_mean.append(float(parts[5]))
            mc_std.append(float(parts[6]))
    return (np.array(ids), np.column_stack([xs, ys]), np.array(labels, dtype=np.int8),
            np.array(probs), np.array(mc_mean), np.array(mc_std))


# -------------------------------------------------------------------------- #
# stages
# -------------------------------------------------------------------------- #


def stage_ingest(config: RunConfig):
    table = load_feature_table(config.features_csv, config.factors, config.crs_note)
    normalized, norm = min_max_normalize(table)
    report = compute_collinearity(normalized)
    filtered = filter_collinear(normalized, report, vif_max=config.vif_max,
                                keep_list=config.keep_features)
    write_feature_table(filtered, config.path("table.csv"),
                        comment=config.provenance(config.sampling.seed))
    _write_json(config.path("normalization.json"),
                {**norm.to_json(), "provenance": config.provenance_obj(0)})
    _write_json(config.path("collinearity.json"),
                {**report.to_json(), "vif_max": config.vif_max,
                 "kept": list(config.keep_features),
                 "provenance": config.provenance_obj(0)})
    _write_json(config.path("selected_features.json"),
                {"selected": filtered.factor_names,
                 "dropped": [n for n in table.factor_names
                             if n not in filtered.factor_names],
                 "provenance": config.provenance_obj(0)})
    return {"n_points": table.n, "n_features_in": table.n_features,
            "n_features_kept": filtered.n_features}


def stage_sample(config: RunConfig):
    config.require("table.csv")
    table = load_feature_table(config.path("table.csv"), _selected_factors(config))
    split = balanced_sample(table, config.sampling)
    payload = split.to_json()
    payload["provenance"] = config.provenance_obj(config.sampling.seed)
    _write_json(config.path("split.json"), payload)
    return {"train": len(split.train), "val": len(split.val), "test": len(split.test)}


def stage_build_graph(config: RunConfig):
    config.require("table.csv", "split.json")
    table = load_feature_table(config.path("table.csv"), _selected_factors(config))
    split = DataSplit.from_json(_read_json(config.path("split.json")))
    nodes = table.subset(np.sort(split.all_ids))
    write_feature_table(nodes, config.path("nodes.csv"),
                        comment=config.provenance(config.sampling.seed))
    pca = fit_pca(nodes.X, config.variance_target)
    graph = build_knn_graph(pca.transform(nodes.X), k=config.model.k_neighbours)
    graph.write_tsv(config.path("graph.tsv"), config.path("graph.json"))
    _write_json(config.path("pca.json"), {
        "n_components": pca.d,
        "explained_variance_ratio": [float(r) for r in pca.explained_variance_ratio],
        "variance_target": config.variance_target,
        "provenance": config.provenance_obj(config.model.seed),
    })
    return {"nodes": graph.n, "edges": graph.n_edges, "pca_components": pca.d}


def stage_pe(config: RunConfig):
    config.require("graph.tsv", "graph.json", "nodes.csv")
    graph = Graph.read_tsv(config.path("graph.tsv"), config.path("graph.json"))
    nodes = _load_nodes(config)
    laplacian = normalized_laplacian(graph)
    pe = compute_pe(laplacian, k_pe=config.model.num_eigenvectors)
    pe.write_csv(config.path("pe.csv"), node_ids=nodes.ids,
                 comment=config.provenance(config.model.seed))
    _write_json(config.path("pe.json"), {
        "eigenvalues": [float(v) for v in pe.eigenvalues],
        "n_components": pe.n_components,
        "provenance": config.provenance_obj(config.model.seed),
    })
    return {"k_pe": pe.k, "graph_components": pe.n_components}


def _load_pe(config: RunConfig) -> LaplacianPE:
    vectors = []
    with open(config.path("pe.csv"), encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("node_id"):
                continue
            vectors.append([float(v) for v in line.strip().split(",")[1:]])
    meta = _read_json(config.path("pe.json"))
    return LaplacianPE(vectors=np.array(vectors, dtype=np.float64),
                       eigenvalues=np.array(meta["eigenvalues"]),
                       n_components=int(meta["n_components"]))


def stage_train(config: RunConfig):
    config.require("nodes.csv", "graph.tsv", "graph.json", "pe.csv", "pe.json",
                   "split.json")
    nodes = _load_nodes(config)
    graph = Graph.read_tsv(config.path("graph.tsv"), config.path("graph.json"))
    pe = _load_pe(config)
    split = DataSplit.from_json(_read_json(config.path("split.json")))
    params, history = train(graph, nodes.X, pe, nodes.labels, split, config.model,
                            node_ids=nodes.ids)
    checkpoint = params.to_json()
    checkpoint["provenance"] = config.provenance_obj(config.model.seed)
    _write_json(config.path("checkpoint.json"), checkpoint)
    history.write_csv(config.path("history.csv"),
                      comment=config.provenance(config.model.seed))
    print(f"trained {len(history.epochs)} epochs "
          f"(best {history.best_epoch}, {history.wall_seconds:.1f}s)", file=sys.stderr)
    return {"epochs": len(history.epochs), "best_epoch": history.best_epoch,
            "best_val_loss": history.epochs[history.best_epoch]["val_loss"]}


def stage_predict(config: RunConfig):
    config.require("nodes.csv", "graph.tsv", "graph.json", "pe.csv", "pe.json",
                   "checkpoint.json")
    nodes = _load_nodes(config)
    graph = Graph.read_tsv(config.path("graph.tsv"), config.path("graph.json"))
    pe = _load_pe(config)
    params = GTParams.from_json(_read_json(config.path("checkpoint.json")))
    probs = forward(graph, nodes.X, pe, params, mode="eval")
    mc_mean, mc_std = mc_dropout_predict(graph, nodes.X, pe, params,
                                         passes=config.mc_passes, seed=config.mc_seed)
    with open(config.path("predictions.csv"), "w", encoding="utf-8") as fh:
        fh.write(f"# {config.provenance(config.mc_seed)}\n")
        fh.write("id,x,y,label,prob,mc_mean,mc_std\n")
        for i in range(nodes.n):
            fh.write(f"{int(nodes.ids[i])},{float(nodes.xy[i, 0])!r},"
                     f"{float(nodes.xy[i, 1])!r},{int(nodes.labels[i])},"
                     f"{float(probs[i])!r},{float(mc_mean[i])!r},{float(mc_std[i])!r}\n")
    return {"n": nodes.n, "mc_passes": config.mc_passes,
            "max_uncertainty": float(mc_std.max())}


def stage_metrics(config: RunConfig):
    config.require("predictions.csv", "split.json")
    ids, _, labels, probs, _, _ = _load_predictions(config)
    split = DataSplit.from_json(_read_json(config.path("split.json")))
    row_of = {int(v): i for i, v in enumerate(ids)}
    test_rows = np.array([row_of[int(i)] for i in split.test])
    report = evaluate(probs[test_rows], labels[test_rows])
    payload = report.to_json()
    payload["provenance"] = config.provenance_obj(config.model.seed)
    _write_json(config.path("metrics.json"), payload)
    report.write_table_csv(config.path("metrics_table.csv"), model_name="GT",
                           comment=config.provenance(config.model.seed))
    return {"auc_roc": report.auc_roc, "sensitivity": report.sensitivity,
            "specificity": report.specificity}


def stage_autocorr(config: RunConfig):
    config.require("predictions.csv")
    _, xy, labels, probs, _, _ = _load_predictions(config)
    weights = build_weights(xy, threshold=config.weights_threshold_m)
    moran = morans_i(probs, weights)
    geary = gearys_c(probs, weights)
    write_autocorr_json(
        {"moran_i": moran, "geary_c": geary}, config.path("autocorr.json"),
        extra={"threshold_m": config.weights_threshold_m,
               "n_isolated": int(weights.isolated.size),
               "provenance": config.provenance_obj(config.model.seed)},
    )
    write_moran_scatter_csv(moran, config.path("moran_scatter.csv"), labels=labels,
                            comment=config.provenance(config.model.seed))
    return {"moran_i": moran.statistic, "geary_c": geary.statistic,
            "moran_z": moran.z_score, "geary_z": geary.z_score}


def _grid_spec(config: RunConfig, xy: np.ndarray) -> GridSpec:
    return GridSpec.covering(xy, cell_size=config.grid_cell_m)


def stage_krige(config: RunConfig):
    config.require("predictions.csv")
    _, xy, _, probs, _, mc_std = _load_predictions(config)
    spec = _grid_spec(config, xy)
    results = {}
    for name, values in (("susceptibility", probs), ("uncertainty", mc_std)):
        points = np.column_stack([xy, values])
        model = fit_variogram(points, n_bins=config.kriging_bins,
                              family=config.kriging_family)
        grid, stats = ordinary_krige(points, model, spec,
                                     m_neighbors=config.kriging_neighbors)
        data = grid.mask()
        if name == "susceptibility":
            grid.values[data] = np.clip(grid.values[data], 0.0, 1.0)
        else:
            # interpolation can overshoot the bounded std field
            grid.values[data] = np.clip(grid.values[data], 0.0, 0.5)
        meta = {
            "variogram": model.to_json(),
            "singular_cells": stats.n_singular,
            "jittered_points": stats.n_jittered,
            "neighbors": stats.neighbors,
            "provenance": config.provenance_obj(config.mc_seed),
        }
        _write_asc_with_meta(grid, config.path(f"{name}.asc"), meta)
        results[name] = model.to_json()
    _write_json(config.path("variogram.json"),
                {**results, "provenance": config.provenance_obj(config.mc_seed)})
    return {"ncols": spec.ncols, "nrows": spec.nrows}


def stage_classify(config: RunConfig):
    config.require("predictions.csv", "susceptibility.asc")
    _, _, _, probs, _, _ = _load_predictions(config)
    breaks = jenks_breaks(probs, k=config.n_classes)
    write_breaks_json(breaks, config.path("breaks.json"),
                      extra={"provenance": config.provenance_obj(config.model.seed)})
    grid = read_asc(config.path("susceptibility.asc"))
    data = grid.mask()
    grid.values[data] = np.clip(grid.values[data], breaks.edges[0], breaks.edges[-1])
    classed, out_of_range = classify(grid, breaks)
    _write_asc_with_meta(classed, config.path("classes.asc"), {
        "breaks": breaks.to_json(),
        "out_of_range_cells": out_of_range,
        "provenance": config.provenance_obj(config.model.seed),
    })
    areas = class_area_report(classed, k=breaks.k)
    write_class_area_csv(areas, config.path("class_areas.csv"), names=breaks.names,
                         comment=config.provenance(config.model.seed))
    return {"breaks": [float(b) for b in breaks.edges],
            "areas_percent": [float(a) for a in areas]}


def stage_importance(config: RunConfig):
    config.require("nodes.csv", "graph.tsv", "graph.json", "pe.csv", "pe.json",
                   "checkpoint.json", "split.json")
    from .explainability import permutation_importance

    nodes = _load_nodes(config)
    graph = Graph.read_tsv(config.path("graph.tsv"), config.path("graph.json"))
    pe = _load_pe(config)
    params = GTParams.from_json(_read_json(config.path("checkpoint.json")))
    split = DataSplit.from_json(_read_json(config.path("split.json")))
    row_of = {int(v): i for i, v in enumerate(nodes.ids)}
    eval_rows = np.array([row_of[int(i)] for i in split.test])
    report = permutation_importance(
        params, graph, nodes.X, pe, nodes.labels, eval_rows,
        feature_names=nodes.factor_names,
        n_perm=config.importance_n_perm, n_boot=config.importance_n_boot,
        seed=config.importance_seed,
    )
    report.write_csv(config.path("importance.csv"),
                     comment=config.provenance(config.importance_seed))
    return {"top": report.ranking()[:4], "threshold": report.threshold,
            "no_signal": report.no_signal}


def _sensitivity_pipeline(config: RunConfig, nodes, split):
    """Train+evaluate closure for the one-at-a-time sweeps."""

    def evaluate_config(model_config: GTConfig):
        pca = fit_pca(nodes.X, config.variance_target)
        graph = build_knn_graph(pca.transform(nodes.X), k=model_config.k_neighbours)
        pe = compute_pe(normalized_laplacian(graph),
                        k_pe=model_config.num_eigenvectors)
        params, _ = train(graph, nodes.X, pe, nodes.labels, split, model_config,
                          node_ids=nodes.ids)
        probs = forward(graph, nodes.X, pe, params, mode="eval")
        row_of = {int(v): i for i, v in enumerate(nodes.ids)}
        test_rows = np.array([row_of[int(i)] for i in split.test])
        auc = auc_roc(probs[test_rows], nodes.labels[test_rows])
        points = np.column_stack([nodes.xy, probs])
        model = fit_variogram(points, n_bins=config.kriging_bins,
                              family=config.kriging_family)
        grid, _ = ordinary_krige(points, model, _grid_spec(config, nodes.xy),
                                 m_neighbors=config.kriging_neighbors)
        cx, cy = grid.cell_centers()
        weights = build_weights(np.column_stack([cx.ravel(), cy.ravel()]),
                                threshold=config.weights_threshold_m)
        values = grid.values.ravel()
        return {"auc": auc,
                "moran_i": morans_i(values, weights).statistic,
                "geary_c": gearys_c(values, weights).statistic}

    return evaluate_config


def stage_sensitivity(config: RunConfig):
    config.require("nodes.csv", "split.json")
    from .explainability import oat_sensitivity

    if not config.sweeps:
        raise ConfigError("config has no sweeps for the sensitivity stage")
    nodes = _load_nodes(config)
    split = DataSplit.from_json(_read_json(config.path("split.json")))
    report = oat_sensitivity(config.model, config.sweeps,
                             _sensitivity_pipeline(config, nodes, split))
    report.write_csv(config.path("sensitivity.csv"),
                     comment=config.provenance(config.model.seed))
    _write_json(config.path("sensitivity_baseline.json"),
                {**report.baseline, "provenance": config.provenance_obj(config.model.seed)})
    return {"parameters": [r["parameter"] for r in report.rows]}


def stage_scenario(config: RunConfig):
    config.require("nodes.csv", "checkpoint.json", "breaks.json", "normalization.json")
    if not config.scenarios:
        raise ConfigError("config lists no scenario specs")
    nodes = _load_nodes(config)
    params = GTParams.from_json(_read_json(config.path("checkpoint.json")))
    breaks = ClassBreaks.from_json(_read_json(config.path("breaks.json")))
    norm = NormalizationParams.from_json(_read_json(config.path("normalization.json")))
    spec_grid = _grid_spec(config, nodes.xy)
    summaries = []
    for spec_path in config.scenarios:
        scenario = load_scenario_spec(spec_path)
        table, flags = apply_scenario(nodes, scenario, norm)
        result = run_scenario(
            params, table, breaks, spec_grid,
            variance_target=config.variance_target,
            passes=config.mc_passes, seed=config.mc_seed,
            variogram_family=config.kriging_family,
            scenario_meta={"rcp": scenario.rcp, "quantile": scenario.quantile,
                           "note": scenario.note, "flags": flags},
        )
        out_dir = config.path(f"scenario_{scenario.tag}")
        os.makedirs(out_dir, exist_ok=True)
        prov = config.provenance_obj(config.mc_seed)
        _write_asc_with_meta(result.susceptibility,
                             os.path.join(out_dir, "susceptibility.asc"),
                             {"provenance": prov, **result.report["kriging"]})
        _write_asc_with_meta(result.uncertainty,
                             os.path.join(out_dir, "uncertainty.asc"),
                             {"provenance": prov})
        classed, _ = classify(result.susceptibility, breaks)
        _write_asc_with_meta(classed, os.path.join(out_dir, "classes.asc"),
                             {"provenance": prov})
        write_class_area_csv(result.class_areas,
                             os.path.join(out_dir, "class_areas.csv"),
                             names=breaks.names,
                             comment=config.provenance(config.mc_seed))
        _write_json(os.path.join(out_dir, "report.json"),
                    {**result.report, "provenance": prov})
        summaries.append({"tag": scenario.tag,
                          "very_high_percent": float(result.class_areas[-1])})
    return {"scenarios": summaries}


def stage_exposure(config: RunConfig):
    config.require("classes.asc")
    if not config.track_geojson:
        raise ConfigError("config has no track_geojson for the exposure stage")
    track = TrackGeometry.from_geojson(config.track_geojson)
    breaks_names = tuple(
        ClassBreaks.from_json(_read_json(config.path("breaks.json"))).names
    ) if os.path.exists(config.path("breaks.json")) else None
    targets = [("", config.path("classes.asc"))]
    for entry in sorted(os.listdir(config.output_dir)):
        candidate = config.path(os.path.join(entry, "classes.asc"))
        if entry.startswith("scenario_") and os.path.exists(candidate):
            targets.append((entry, candidate))
    results = {}
    for tag, path in targets:
        report = track_exposure(track, read_asc(path), class_names=breaks_names)
        out = (config.path("exposure.csv") if not tag
               else config.path(os.path.join(tag, "exposure.csv")))
        report.write_csv(out, comment=config.provenance(config.model.seed))
        results[tag or "baseline"] = report.percentages
    return {"exposures": list(results)}


def stage_report(config: RunConfig):
    """Aggregate tables and render the report figures."""
    from . import figures

    config.require("metrics_table.csv", "class_areas.csv", "classes.asc",
                   "susceptibility.asc", "uncertainty.asc", "moran_scatter.csv",
                   "autocorr.json", "history.csv", "breaks.json")
    report_dir = config.path("report")
    os.makedirs(report_dir, exist_ok=True)
    breaks = ClassBreaks.from_json(_read_json(config.path("breaks.json")))
    prov = config.provenance(config.model.seed)

    # performance table (copy of the metrics table)
    with open(config.path("metrics_table.csv"), encoding="utf-8") as fh:
        content = fh.read()
    with open(os.path.join(report_dir, "performance_table.csv"), "w",
              encoding="utf-8") as fh:
        fh.write(content)

    # class area + optional track length table
    def read_area_row(path):
        with open(path, encoding="utf-8") as fh:
            rows = [r for r in fh.read().strip().splitlines() if not r.startswith("#")]
        return [float(v) for v in rows[1].split(",")[1:]]

    areas = read_area_row(config.path("class_areas.csv"))
    extra_rows = []
    if os.path.exists(config.path("exposure.csv")):
        lengths = _exposure_percent_row(config.path("exposure.csv"), breaks.names)
        extra_rows.append(("Length", lengths))
    write_class_area_csv(areas, os.path.join(report_dir, "class_area_length_table.csv"),
                         names=breaks.names, comment=prov, extra_rows=extra_rows)

    # scenario table across all scenario directories
    scenario_rows = []
    for entry in sorted(os.listdir(config.output_dir)):
        if not entry.startswith("scenario_"):
            continue
        report_json = config.path(os.path.join(entry, "report.json"))
        if not os.path.exists(report_json):
            continue
        payload = _read_json(report_json)
        row = {
            "rcp": payload["scenario"]["rcp"],
            "quantile": payload["scenario"]["quantile"],
            "area_percent": payload["class_areas_percent"],
            "length_percent": None,
        }
        exposure_csv = config.path(os.path.join(entry, "exposure.csv"))
        if os.path.exists(exposure_csv):
            row["length_percent"] = _exposure_percent_row(exposure_csv, breaks.names)
        scenario_rows.append(row)
    if scenario_rows:
        write_scenario_table_csv(scenario_rows,
                                 os.path.join(report_dir, "scenario_table.csv"),
                                 comment=prov, class_names=breaks.names)

    # figures
    z_values, lags, labels = _read_scatter(config.path("moran_scatter.csv"))
    autocorr = _read_json(config.path("autocorr.json"))
    figures.moran_scatter_png(z_values, lags, labels,
                              os.path.join(report_dir, "moran_scatter.png"),
                              statistic=autocorr["moran_i"]["statistic"])
    epochs = _read_history(config.path("history.csv"))
    figures.history_png(epochs, os.path.join(report_dir, "history.png"))
    track = (TrackGeometry.from_geojson(config.track_geojson)
             if config.track_geojson else None)
    figures.raster_png(read_asc(config.path("susceptibility.asc")),
                       os.path.join(report_dir, "susceptibility.png"),
                       title="Flood susceptibility", cmap="RdYlGn_r", vmin=0.0, vmax=1.0)
    figures.raster_png(read_asc(config.path("uncertainty.asc")),
                       os.path.join(report_dir, "uncertainty.png"),
                       title="Epistemic uncertainty (MC dropout)", cmap="magma")
    figures.class_raster_png(read_asc(config.path("classes.asc")),
                             os.path.join(report_dir, "classes.png"),
                             breaks=breaks, title="Susceptibility classes",
                             track=track)
    produced = ["performance_table.csv", "class_area_length_table.csv",
                "moran_scatter.png", "history.png", "susceptibility.png",
                "uncertainty.png", "classes.png"]
    if scenario_rows:
        produced.append("scenario_table.csv")
    if os.path.exists(config.path("importance.csv")):
        names, imp, lo, hi, threshold = _read_importance(config.path("importance.csv"))
        figures.importance_png(names, imp, lo, hi, threshold,
                               os.path.join(report_dir, "importance.png"))
        produced.append("importance.png")
    if os.path.exists(config.path("sensitivity.csv")):
        rows = _read_sensitivity(config.path("sensitivity.csv"))
        figures.sensitivity_png(rows, os.path.join(report_dir, "sensitivity.png"))
        produced.append("sensitivity.png")
    _write_json(os.path.join(report_dir, "index.json"),
                {"artifacts": produced,
                 "provenance": config.provenance_obj(config.model.seed)})
    return {"report_dir": report_dir, "artifacts": produced}


def _exposure_percent_row(path, names):
    percents = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("class,"):
                continue
            parts = line.strip().split(",")
            if parts[0] in names and parts[2]:
                percents[parts[0]] = float(parts[2])
    return [percents.get(n, 0.0) for n in names]


def _read_scatter(path):
    z_values, lags, labels = [], [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("z_value"):
                continue
            z, lag, label = line.strip().split(",")
            z_values.append(float(z))
            lags.append(float(lag))
            labels.append(int(label) if label else 0)
    return np.array(z_values), np.array(lags), np.array(labels)


def _read_history(path):
    epochs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("epoch,"):
                continue
            _, train_loss, val_loss, val_auc, _ = line.strip().split(",")
            epochs.append({"train_loss": float(train_loss),
                           "val_loss": float(val_loss), "val_auc": float(val_auc)})
    return epochs


def _read_importance(path):
    names, imp, lo, hi = [], [], [], []
    threshold = 0.0
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("feature,"):
                continue
            parts = line.strip().split(",")
            names.append(parts[0])
            imp.append(float(parts[1]))
            lo.append(float(parts[2]))
            hi.append(float(parts[3]))
            threshold = float(parts[5])
    return names, np.array(imp), np.array(lo), np.array(hi), threshold


def _read_sensitivity(path):
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.startswith("#") or line.startswith("parameter,"):
                continue
            parts = line.strip().split(",")
            rows.append({"parameter": parts[0],
                         "max_abs_delta_auc": float(parts[1]),
                         "max_abs_delta_moran": float(parts[2]),
                         "max_abs_delta_geary": float(parts[3])})
    return rows


# -------------------------------------------------------------------------- #
# synthetic-data subcommand
# -------------------------------------------------------------------------- #


def cmd_synth(args):
    """Write the synthetic watershed inputs plus a ready-to-run config."""
    from .synthetic import FACTORS, generate_scenario, generate_track, generate_watershed

    out = os.path.abspath(args.out_dir)
    os.makedirs(out, exist_ok=True)
    table = generate_watershed(n_points=args.n_points, seed=args.seed)
    write_feature_table(table, os.path.join(out, "features.csv"),
                        comment=f"synthetic watershed seed={args.seed}")
    track = generate_track(seed=args.seed)
    features = []
    for line in track.polylines:
        features.append({
            "type": "Feature", "properties": {},
            "geometry": {"type": "LineString",
                         "coordinates": [[float(x), float(y)] for x, y in line]},
        })
    with open(os.path.join(out, "track.geojson"), "w", encoding="utf-8") as fh:
        json.dump({"type": "FeatureCollection", "features": features}, fh)
        fh.write("\n")

    scenario_paths = []
    for pair in args.scenarios.split(",") if args.scenarios else []:
        rcp, quantile = pair.split(":")
        spec = generate_scenario(table, rcp, quantile, seed=args.seed)
        name = f"scenario_{spec.tag}"
        write_scenario_spec(spec, os.path.join(out, f"{name}.json"),
                            os.path.join(out, f"{name}_precipitation.csv"),
                            os.path.join(out, f"{name}_lulc.csv"))
        scenario_paths.append(f"{name}.json")

    config = {
        "paths": {
            "features_csv": "features.csv",
            "track_geojson": "track.geojson",
            "scenarios": scenario_paths,
            "output_dir": "artifacts",
        },
        "factors": [{"name": f.name, "kind": f.kind} for f in FACTORS],
        "keep_features": ["precipitation", "lulc"],
        "vif_max": 10.0,
        "sampling": {"n_per_class": args.n_per_class,
                     "ratios": [0.7, 0.15, 0.15], "seed": args.seed + 1},
        "variance_target": 0.95,
        "model": GTConfig(seed=args.seed + 2).to_json(),
        "weights_threshold_m": 2000.0,
        "grid_cell_m": 250.0,
        "kriging": {"family": "spherical", "n_bins": 15, "neighbors": 32},
        "mc_passes": 100,
        "mc_seed": args.seed + 3,
        "n_classes": 5,
        "importance": {"n_perm": 30, "n_boot": 100, "seed": args.seed + 4},
        "sweeps": {"learning_rate": [0.005, 0.02], "k_neighbours": [4, 12]},
        "crs_note": "synthetic local metric CRS",
    }
    config_path = os.path.join(out, "config.json")
    _write_json(config_path, config)
    os.makedirs(os.path.join(out, "artifacts"), exist_ok=True)
    print(json.dumps({"config": config_path,
                      "n_points": args.n_points,
                      "scenarios": scenario_paths}))
    return EXIT_OK


# -------------------------------------------------------------------------- #
# entry point
# -------------------------------------------------------------------------- #

_STAGE_FUNCS = {
    "ingest": stage_ingest,
    "sample": stage_sample,
    "build-graph": stage_build_graph,
    "pe": stage_pe,
    "train": stage_train,
    "predict": stage_predict,
    "metrics": stage_metrics,
    "autocorr": stage_autocorr,
    "krige": stage_krige,
    "classify": stage_classify,
    "importance": stage_importance,
    "sensitivity": stage_sensitivity,
    "scenario": stage_scenario,
    "exposure": stage_exposure,
    "report": stage_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="floodgt",
        description="Graph-transformer flood susceptibility pipeline",
    )
    parser.add_argument("--version", action="version", version=f"floodgt {__version__}")
    parser.add_argument("--config-schema", action="store_true",
                        help="print the machine-readable config descriptor and exit")
    sub = parser.add_subparsers(dest="command")
    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="run configuration JSON")
    p = sub.add_parser("synth", help="generate the synthetic watershed inputs")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--n-points", type=int, default=2000)
    p.add_argument("--n-per-class", type=int, default=400)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--scenarios", default="RCP2.6:Q05,RCP8.5:Q95",
                   help="comma list of RCP:quantile pairs (empty for none)")
    return parser


def _fail(stage: str, exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "stage": stage}
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config_schema:
        print(json.dumps(CONFIG_SCHEMA, indent=2))
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_USAGE
    if args.command == "synth":
        return cmd_synth(args)

    stage_fn = _STAGE_FUNCS[args.command]
    try:
        config = RunConfig.load(args.config)
    except ConfigError as exc:
        return _fail(args.command, exc, EXIT_CONFIG)
    os.makedirs(config.output_dir, exist_ok=True)
    try:
        summary = stage_fn(config)
    except ConfigError as exc:
        return _fail(args.command, exc, EXIT_CONFIG)
    except MissingArtifactError as exc:
        return _fail(args.command, exc, EXIT_MISSING_ARTIFACT)
    except (ParseError, ValidationError) as exc:
        return _fail(args.command, exc, EXIT_DATA)
    except (TrainingDivergence, NumericalError) as exc:
        return _fail(args.command, exc, EXIT_NUMERIC)
    except Exception as exc:  # still emit machine-readable errors
        return _fail(args.command, exc, EXIT_UNEXPECTED)
    print(json.dumps({"stage": args.command, "ok": True, **(summary or {})}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
