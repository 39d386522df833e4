import json

import numpy as np
import pytest

from floodgt.data_ingest import min_max_normalize
from floodgt.errors import ValidationError
from floodgt.mapping import RasterGrid
from floodgt.scenario_exposure import (
    ScenarioSpec,
    TrackGeometry,
    apply_scenario,
    load_scenario_spec,
    track_exposure,
    write_scenario_spec,
)
from floodgt.synthetic import generate_scenario, generate_watershed


@pytest.fixture(scope="module")
def baseline():
    table_raw = generate_watershed(n_points=300, seed=1)
    table, norm = min_max_normalize(table_raw)
    return table_raw, table, norm


def identity_spec(table_raw):
    return ScenarioSpec(
        rcp="RCP4.5",
        quantile="Q50",
        precipitation={int(i): float(v) for i, v in
                       zip(table_raw.ids, table_raw.column("precipitation"))},
        lulc={int(i): float(v) for i, v in
              zip(table_raw.ids, table_raw.column("lulc"))},
    )


# ---------------------------------------------------------------------- #
# scenario substitution
# ---------------------------------------------------------------------- #


def test_identity_scenario_leaves_table_unchanged(baseline):
    table_raw, table, norm = baseline
    out, flags = apply_scenario(table, identity_spec(table_raw), norm)
    np.testing.assert_array_equal(out.X, table.X)
    assert flags["out_of_range"] == {}


def test_projection_beyond_range_is_flagged_not_clipped(baseline):
    table_raw, table, norm = baseline
    spec = identity_spec(table_raw)
    # Q95-style projection far above the historical maximum
    hot_id = int(table_raw.ids[0])
    spec.precipitation[hot_id] = 1745.0
    out, flags = apply_scenario(table, spec, norm)
    j = table.factor_names.index("precipitation")
    assert out.X[0, j] > 1.0
    assert flags["out_of_range"]["precipitation"]["count"] == 1
    assert hot_id in flags["out_of_range"]["precipitation"]["ids"]


def test_untouched_columns_bit_identical(baseline):
    table_raw, table, norm = baseline
    scenario = generate_scenario(table_raw, "RCP8.5", "Q95", seed=2)
    out, _ = apply_scenario(table, scenario, norm)
    touched = {"precipitation", "lulc"}
    for j, name in enumerate(table.factor_names):
        if name not in touched:
            np.testing.assert_array_equal(out.X[:, j], table.X[:, j])
    np.testing.assert_array_equal(out.labels, table.labels)


def test_missing_replacement_errors(baseline):
    table_raw, table, norm = baseline
    spec = identity_spec(table_raw)
    del spec.precipitation[int(table_raw.ids[5])]
    with pytest.raises(ValidationError, match="does not cover"):
        apply_scenario(table, spec, norm)


def test_spec_validation():
    with pytest.raises(ValidationError, match="rcp"):
        ScenarioSpec(rcp="RCP6.0", quantile="Q50", precipitation={0: 1.0}, lulc={0: 1.0})
    with pytest.raises(ValidationError, match="positive"):
        ScenarioSpec(rcp="RCP2.6", quantile="Q50", precipitation={0: -1.0}, lulc={0: 1.0})


def test_spec_file_roundtrip(tmp_path, baseline):
    table_raw, _, _ = baseline
    spec = generate_scenario(table_raw, "RCP2.6", "Q05", seed=3)
    write_scenario_spec(spec, tmp_path / "s.json", tmp_path / "p.csv", tmp_path / "l.csv")
    back = load_scenario_spec(tmp_path / "s.json")
    assert back.rcp == "RCP2.6" and back.quantile == "Q05"
    assert back.precipitation == spec.precipitation
    assert back.lulc == spec.lulc


# ---------------------------------------------------------------------- #
# track exposure
# ---------------------------------------------------------------------- #


def one_class_raster(value=3.0, n=4, cell=10.0):
    return RasterGrid(0.0, 0.0, cell, -9999.0, np.full((n, n), value))


def test_track_fully_inside_one_class():
    track = TrackGeometry([np.array([[5.0, 5.0], [35.0, 30.0], [12.0, 33.0]])])
    report = track_exposure(track, one_class_raster())
    assert report.percentages["moderate"] == pytest.approx(100.0)
    assert report.outside_m == 0.0
    assert sum(report.lengths_m.values()) == pytest.approx(track.total_length)


def test_segment_split_at_shared_edge_is_half_half():
    values = np.array([[1.0, 2.0]])  # two cells side by side
    raster = RasterGrid(0.0, 0.0, 10.0, -9999.0, values)
    track = TrackGeometry([np.array([[5.0, 5.0], [15.0, 5.0]])])
    report = track_exposure(track, raster)
    assert report.lengths_m["very-low"] == pytest.approx(5.0)
    assert report.lengths_m["low"] == pytest.approx(5.0)
    assert report.percentages["very-low"] == pytest.approx(50.0)


def test_outside_portions_counted_separately():
    track = TrackGeometry([np.array([[-20.0, 5.0], [20.0, 5.0]])])
    raster = one_class_raster(n=4, cell=10.0)
    report = track_exposure(track, raster)
    assert report.outside_m == pytest.approx(20.0)
    assert report.lengths_m["moderate"] == pytest.approx(20.0)


def test_zero_in_extent_length_errors():
    track = TrackGeometry([np.array([[-30.0, -30.0], [-10.0, -10.0]])])
    with pytest.raises(ValidationError, match="zero length"):
        track_exposure(track, one_class_raster())


def sampling_oracle(track, raster, n_samples=100_000):
    """Dense point sampling along the track, majority cell assignment."""
    lengths = {}
    outside = 0.0
    for line in track.polylines:
        for s in range(line.shape[0] - 1):
            p0, p1 = line[s], line[s + 1]
            seg_len = float(np.hypot(*(p1 - p0)))
            if seg_len == 0.0:
                continue
            ts = (np.arange(n_samples) + 0.5) / n_samples
            xs = p0[0] + ts * (p1[0] - p0[0])
            ys = p0[1] + ts * (p1[1] - p0[1])
            piece = seg_len / n_samples
            for x, y in zip(xs, ys):
                cell = raster.cell_of(x, y)
                if cell is None:
                    outside += piece
                    continue
                value = raster.values[cell]
                lengths[value] = lengths.get(value, 0.0) + piece
    return lengths, outside


@pytest.mark.parametrize("trial", range(4))
def test_clipping_matches_sampling_oracle(trial):
    rng = np.random.default_rng(400 + trial)
    values = rng.integers(1, 6, size=(4, 4)).astype(np.float64)
    raster = RasterGrid(0.0, 0.0, 25.0, -9999.0, values)
    vertices = rng.uniform(-10.0, 110.0, size=(5, 2))
    track = TrackGeometry([vertices])
    report = track_exposure(track, raster)
    oracle_lengths, oracle_outside = sampling_oracle(track, raster, n_samples=20_000)
    total = track.total_length
    for c, name in enumerate(("very-low", "low", "moderate", "high", "very-high"), start=1):
        got = report.lengths_m.get(name, 0.0)
        expected = oracle_lengths.get(float(c), 0.0)
        assert abs(got - expected) / total < 1e-3
    assert abs(report.outside_m - oracle_outside) / total < 1e-3


def test_conservation_and_percentage_sum():
    rng = np.random.default_rng(5)
    values = rng.integers(1, 6, size=(6, 6)).astype(np.float64)
    values[2, 2] = -9999.0  # a nodata hole
    raster = RasterGrid(0.0, 0.0, 20.0, -9999.0, values)
    track = TrackGeometry([rng.uniform(-20.0, 140.0, size=(8, 2))])
    report = track_exposure(track, raster)
    accounted = sum(report.lengths_m.values()) + report.outside_m
    assert abs(accounted - track.total_length) / track.total_length < 1e-9
    assert abs(sum(report.percentages.values()) - 100.0) < 1e-6


def test_geojson_loading(tmp_path):
    path = tmp_path / "track.geojson"
    payload = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {},
             "geometry": {"type": "LineString",
                          "coordinates": [[0.0, 0.0], [100.0, 50.0]]}},
            {"type": "Feature", "properties": {},
             "geometry": {"type": "MultiLineString",
                          "coordinates": [[[0.0, 10.0], [5.0, 10.0]],
                                          [[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]]}},
        ],
    }
    path.write_text(json.dumps(payload))
    track = TrackGeometry.from_geojson(path)
    assert len(track.polylines) == 3
    assert track.polylines[0].shape == (2, 2)
    assert track.total_length > 0


def test_geojson_rejects_points(tmp_path):
    path = tmp_path / "bad.geojson"
    path.write_text(json.dumps({"type": "Point", "coordinates": [0.0, 0.0]}))
    with pytest.raises(ValidationError, match="unsupported"):
        TrackGeometry.from_geojson(path)


# ---------------------------------------------------------------------- #
# scenario inference integration
# ---------------------------------------------------------------------- #


def test_run_scenario_identity_matches_baseline(baseline):
    from floodgt import gt_model as gt
    from floodgt.graph_construction import build_knn_graph, fit_pca
    from floodgt.mapping import GridSpec, jenks_breaks
    from floodgt.positional_encoding import compute_pe, normalized_laplacian
    from floodgt.sampling import DataSplit
    from floodgt.scenario_exposure import run_scenario

    table_raw, table, norm = baseline
    pca = fit_pca(table.X, 0.95)
    graph = build_knn_graph(pca.transform(table.X), k=5)
    pe = compute_pe(normalized_laplacian(graph), k_pe=2)
    ids = np.arange(table.n)
    split = DataSplit(train=ids[:210], val=ids[210:255], test=ids[255:],
                      provenance={})
    config = gt.GTConfig(num_eigenvectors=2, k_neighbours=5, num_heads=2,
                         hidden_dim=16, num_layers=1, dropout=0.1,
                         learning_rate=0.02, max_epochs=40, patience=10, seed=8)
    params, _ = gt.train(graph, table.X, pe, table.labels, split, config)

    mean, _ = gt.mc_dropout_predict(graph, table.X, pe, params, passes=20, seed=2)
    breaks = jenks_breaks(mean, k=5)
    grid = GridSpec.covering(table.xy, cell_size=500.0)

    base_result = run_scenario(params, table, breaks, grid, passes=20, seed=2)
    identity, _ = apply_scenario(table, identity_spec(table_raw), norm)
    scen_result = run_scenario(params, identity, breaks, grid, passes=20, seed=2)
    np.testing.assert_allclose(scen_result.class_areas, base_result.class_areas,
                               atol=0.5)  # percentage points
    u = scen_result.uncertainty
    data = u.values[u.mask()]
    assert np.all((data >= 0.0) & (data <= 0.5))
    assert scen_result.report["graph_rebuilt"]

    frozen_result = run_scenario(params, identity, breaks, grid, passes=20,
                                 seed=2, frozen=(graph, pe))
    np.testing.assert_allclose(frozen_result.class_areas, base_result.class_areas,
                               atol=0.5)
    assert not frozen_result.report["graph_rebuilt"]


def test_run_scenario_deterministic(baseline):
    from floodgt import gt_model as gt
    from floodgt.graph_construction import build_knn_graph, fit_pca
    from floodgt.mapping import GridSpec, jenks_breaks
    from floodgt.positional_encoding import compute_pe, normalized_laplacian
    from floodgt.sampling import DataSplit
    from floodgt.scenario_exposure import run_scenario

    table_raw, table, norm = baseline
    pca = fit_pca(table.X, 0.95)
    graph = build_knn_graph(pca.transform(table.X), k=5)
    pe = compute_pe(normalized_laplacian(graph), k_pe=2)
    ids = np.arange(table.n)
    split = DataSplit(train=ids[:210], val=ids[210:255], test=ids[255:],
                      provenance={})
    config = gt.GTConfig(num_eigenvectors=2, k_neighbours=5, num_heads=2,
                         hidden_dim=16, num_layers=1, dropout=0.1,
                         learning_rate=0.02, max_epochs=30, patience=10, seed=8)
    params, _ = gt.train(graph, table.X, pe, table.labels, split, config)
    scenario = generate_scenario(table_raw, "RCP8.5", "Q95", seed=4)
    scen_table, _ = apply_scenario(table, scenario, norm)
    mean, _ = gt.mc_dropout_predict(graph, table.X, pe, params, passes=10, seed=2)
    breaks = jenks_breaks(mean, k=5)
    grid = GridSpec.covering(table.xy, cell_size=500.0)
    a = run_scenario(params, scen_table, breaks, grid, passes=10, seed=5)
    b = run_scenario(params, scen_table, breaks, grid, passes=10, seed=5)
    np.testing.assert_array_equal(a.susceptibility.values, b.susceptibility.values)
    np.testing.assert_array_equal(a.uncertainty.values, b.uncertainty.values)
