import itertools

import numpy as np
import pytest

from floodgt.errors import ValidationError
from floodgt.mapping import (
    ClassBreaks,
    GridSpec,
    RasterGrid,
    VariogramModel,
    class_area_report,
    classify,
    classify_values,
    fit_variogram,
    jenks_breaks,
    krige_weights,
    ordinary_krige,
    read_asc,
    total_within_class_ssd,
    write_asc,
)

PAPER_STYLE_BREAKS = ClassBreaks(edges=np.array([0.0, 0.0963, 0.258, 0.456, 0.7, 1.0]))


# ---------------------------------------------------------------------- #
# variogram
# ---------------------------------------------------------------------- #


def test_constant_field_degenerates_to_pure_nugget():
    rng = np.random.default_rng(0)
    points = np.column_stack([rng.uniform(0, 1000, size=(20, 2)), np.full(20, 3.5)])
    model = fit_variogram(points)
    assert model.sill == model.nugget
    grid, _ = ordinary_krige(points, model, GridSpec(0, 0, 250.0, 4, 4))
    np.testing.assert_allclose(grid.values, 3.5, atol=1e-12)


def test_variogram_needs_ten_points():
    points = np.array([[0.0, 0.0, 1.0], [10.0, 0.0, 2.0]])
    with pytest.raises(ValidationError, match=">= 10 points"):
        fit_variogram(points)


def simulate_spherical_field(n, range_, sill, seed):
    """Gaussian field with spherical covariance C(h) = sill - gamma(h)."""
    rng = np.random.default_rng(seed)
    xy = rng.uniform(0, 5000, size=(n, 2))
    d = np.sqrt(((xy[:, None, :] - xy[None, :, :]) ** 2).sum(axis=2))
    ratio = np.clip(d / range_, 0.0, 1.0)
    cov = sill * (1.0 - (1.5 * ratio - 0.5 * ratio**3))
    cov[d >= range_] = 0.0
    cov += np.eye(n) * 1e-8
    values = np.linalg.cholesky(cov) @ rng.normal(size=n)
    return np.column_stack([xy, values])


def test_fit_recovers_known_spherical_range():
    # tolerance calibrated over repeated seeds; this one sits comfortably in
    true_range = 1000.0
    points = simulate_spherical_field(500, true_range, 1.0, seed=42)
    model = fit_variogram(points, n_bins=15, family="spherical")
    assert model.family == "spherical"
    assert abs(model.range_ - true_range) / true_range < 0.30
    assert model.sill >= model.nugget >= 0.0


def test_variogram_model_validation():
    with pytest.raises(ValidationError):
        VariogramModel("spherical", nugget=0.5, sill=0.2, range_=100.0)
    with pytest.raises(ValidationError):
        VariogramModel("cubic", nugget=0.0, sill=1.0, range_=100.0)


def test_gamma_zero_at_origin_and_nugget_above():
    model = VariogramModel("spherical", nugget=0.2, sill=1.0, range_=500.0)
    assert model.gamma(0.0) == 0.0
    assert model.gamma(1e-9) == pytest.approx(0.2, rel=1e-6)
    assert model.gamma(500.0) == pytest.approx(1.0)
    assert model.gamma(5000.0) == pytest.approx(1.0)


# ---------------------------------------------------------------------- #
# kriging
# ---------------------------------------------------------------------- #


def dense_krige_oracle(points, model, centers):
    """Independent full-system solve: loop-built matrices, no truncation."""
    xy, values = points[:, :2], points[:, 2]
    n = xy.shape[0]
    out = []
    for cx, cy in centers:
        system = np.zeros((n + 1, n + 1))
        for a in range(n):
            for b in range(n):
                h = np.hypot(xy[a, 0] - xy[b, 0], xy[a, 1] - xy[b, 1])
                system[a, b] = model.gamma(h)
            system[a, n] = 1.0
            system[n, a] = 1.0
        rhs = np.zeros(n + 1)
        for a in range(n):
            rhs[a] = model.gamma(np.hypot(xy[a, 0] - cx, xy[a, 1] - cy))
        rhs[n] = 1.0
        w = np.linalg.solve(system, rhs)[:n]
        out.append(float(w @ values))
    return np.array(out)


FIVE_POINTS = np.array(
    [
        [100.0, 100.0, 1.0],
        [900.0, 150.0, 3.0],
        [500.0, 500.0, 2.0],
        [120.0, 880.0, 4.0],
        [860.0, 840.0, 0.5],
    ]
)
MODEL = VariogramModel("spherical", nugget=0.0, sill=1.0, range_=800.0)


def test_zero_nugget_is_exact_at_sample_locations():
    # place a cell center exactly on a sample point
    spec = GridSpec(x_ll=0.0, y_ll=0.0, cell_size=200.0, ncols=5, nrows=5)
    grid, stats = ordinary_krige(FIVE_POINTS, MODEL, spec)
    cell = grid.cell_of(100.0, 100.0)
    assert grid.cell_centers()[0][cell] == 100.0
    assert abs(grid.values[cell] - 1.0) < 1e-6
    cell = grid.cell_of(500.0, 500.0)
    assert abs(grid.values[cell] - 2.0) < 1e-6
    assert stats.n_singular == 0


def test_weights_sum_to_one_everywhere():
    spec = GridSpec(0.0, 0.0, 150.0, 6, 6)
    for row in range(6):
        for col in range(6):
            w = krige_weights(FIVE_POINTS, MODEL, spec, (row, col))
            assert abs(w.sum() - 1.0) < 1e-9


def test_truncated_matches_dense_oracle_on_five_points():
    spec = GridSpec(0.0, 0.0, 250.0, 4, 4)
    grid, _ = ordinary_krige(FIVE_POINTS, MODEL, spec, m_neighbors=32)
    dense_grid, _ = ordinary_krige(FIVE_POINTS, MODEL, spec, dense=True)
    cx, cy = grid.cell_centers()
    oracle = dense_krige_oracle(FIVE_POINTS, MODEL, np.column_stack([cx.ravel(), cy.ravel()]))
    np.testing.assert_allclose(grid.values.ravel(), oracle, atol=1e-8)
    np.testing.assert_allclose(dense_grid.values.ravel(), oracle, atol=1e-8)


def test_duplicate_points_are_jittered_not_fatal():
    points = np.vstack([FIVE_POINTS, FIVE_POINTS[2]])  # exact duplicate row
    spec = GridSpec(0.0, 0.0, 250.0, 4, 4)
    grid, stats = ordinary_krige(points, MODEL, spec)
    assert stats.n_jittered == 1
    assert np.all(grid.values != grid.nodata)


def test_kriging_needs_three_points():
    with pytest.raises(ValidationError, match="at least 3"):
        ordinary_krige(FIVE_POINTS[:2], MODEL, GridSpec(0, 0, 100.0, 2, 2))


# ---------------------------------------------------------------------- #
# natural breaks
# ---------------------------------------------------------------------- #


def exhaustive_partition_ssd(values, k):
    """Minimum within-class SSD over all contiguous partitions (oracle)."""
    values = np.sort(values)
    n = len(values)
    best = np.inf
    for cuts in itertools.combinations(range(1, n), k - 1):
        bounds = (0,) + cuts + (n,)
        total = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg = values[a:b]
            total += float(np.sum((seg - seg.mean()) ** 2))
        best = min(best, total)
    return best


def test_two_cluster_break_sits_between_groups():
    values = np.array([1.0, 2.0, 3.0, 10.0, 11.0, 12.0])
    breaks = jenks_breaks(values, k=2)
    assert 3.0 < breaks.edges[1] <= 10.0
    np.testing.assert_array_equal(classify_values(values, breaks), [1, 1, 1, 2, 2, 2])
    assert total_within_class_ssd(values, breaks) == pytest.approx(
        exhaustive_partition_ssd(values, 2)
    )


def test_each_value_its_own_class():
    values = np.arange(1.0, 7.0)  # arithmetic progression, k = n
    breaks = jenks_breaks(values, k=6)
    assert total_within_class_ssd(values, breaks) == 0.0
    np.testing.assert_array_equal(classify_values(values, breaks), np.arange(1, 7))


@pytest.mark.parametrize("trial", range(12))
def test_dp_matches_exhaustive_oracle(trial):
    rng = np.random.default_rng(200 + trial)
    n = int(rng.integers(6, 13))
    k = int(rng.integers(2, 5))
    values = np.round(rng.uniform(0, 10, size=n), 2)
    if len(np.unique(values)) < k:
        values = np.arange(n, dtype=float)
    breaks = jenks_breaks(values, k=k)
    dp_ssd = total_within_class_ssd(values, breaks)
    assert dp_ssd == pytest.approx(exhaustive_partition_ssd(values, k), abs=1e-9)


def test_dp_beats_random_partitions():
    rng = np.random.default_rng(300)
    values = rng.normal(size=200)
    breaks = jenks_breaks(values, k=5)
    dp_ssd = total_within_class_ssd(values, breaks)
    sorted_values = np.sort(values)
    for _ in range(1000):
        cuts = np.sort(rng.choice(np.arange(1, 200), size=4, replace=False))
        bounds = np.concatenate([[0], cuts, [200]])
        total = 0.0
        for a, b in zip(bounds[:-1], bounds[1:]):
            seg = sorted_values[a:b]
            total += float(np.sum((seg - seg.mean()) ** 2))
        assert dp_ssd <= total + 1e-9


def test_jenks_needs_enough_distinct_values():
    with pytest.raises(ValidationError, match="distinct"):
        jenks_breaks(np.array([1.0, 1.0, 2.0, 2.0]), k=3)


def test_breaks_strictly_ascending():
    rng = np.random.default_rng(301)
    values = np.round(rng.uniform(0, 1, size=500), 2)  # heavy ties
    breaks = jenks_breaks(values, k=5)
    assert np.all(np.diff(breaks.edges) > 0)
    assert breaks.edges[0] == values.min() and breaks.edges[-1] == values.max()


# ---------------------------------------------------------------------- #
# classification
# ---------------------------------------------------------------------- #


def test_half_open_convention_on_reference_breaks():
    # 0.456 <= 0.5 < 0.7 puts 0.5 in the fourth (high) class
    assert classify_values(np.array([0.5]), PAPER_STYLE_BREAKS)[0] == 4
    assert classify_values(np.array([1.0]), PAPER_STYLE_BREAKS)[0] == 5  # closed top
    assert classify_values(np.array([0.0963]), PAPER_STYLE_BREAKS)[0] == 2
    assert PAPER_STYLE_BREAKS.names[3] == "high"


def test_classify_monotone():
    rng = np.random.default_rng(302)
    values = np.sort(rng.uniform(0, 1, size=100))
    classes = classify_values(values, PAPER_STYLE_BREAKS)
    assert np.all(np.diff(classes) >= 0)


def test_classify_raster_counts_out_of_range():
    values = np.array([[0.2, 1.4], [-0.3, 0.8]])
    raster = RasterGrid(0.0, 0.0, 10.0, -9999.0, values)
    classed, n_out = classify(raster, PAPER_STYLE_BREAKS)
    assert n_out == 2
    assert classed.values[0, 1] == classed.nodata
    assert classed.values[1, 0] == classed.nodata
    assert classed.values[0, 0] == 2.0 and classed.values[1, 1] == 5.0


def test_class_area_single_class():
    raster = RasterGrid(0.0, 0.0, 10.0, -9999.0, np.full((4, 4), 3.0))
    np.testing.assert_allclose(class_area_report(raster), [0, 0, 100.0, 0, 0])


def test_class_area_half_and_half():
    values = np.concatenate([np.ones(8), np.full(8, 5.0)]).reshape(4, 4)
    raster = RasterGrid(0.0, 0.0, 10.0, -9999.0, values)
    areas = class_area_report(raster)
    np.testing.assert_allclose(areas, [50.0, 0, 0, 0, 50.0])
    assert abs(areas.sum() - 100.0) < 1e-9


def test_class_area_all_nodata_errors():
    raster = RasterGrid(0.0, 0.0, 10.0, -9999.0, np.full((2, 2), -9999.0))
    with pytest.raises(ValidationError, match="nodata"):
        class_area_report(raster)


# ---------------------------------------------------------------------- #
# ASCII grid I/O
# ---------------------------------------------------------------------- #


def test_asc_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(303)
    values = rng.uniform(0, 1, size=(7, 5))
    values[2, 3] = -9999.0
    grid = RasterGrid(1000.0, 2000.0, 25.0, -9999.0, values)
    p1, p2 = tmp_path / "a.asc", tmp_path / "b.asc"
    write_asc(grid, p1)
    back = read_asc(p1)
    assert (back.x_ll, back.y_ll, back.cell_size) == (1000.0, 2000.0, 25.0)
    write_asc(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_asc_header_layout(tmp_path):
    grid = RasterGrid(0.0, 0.0, 10.0, -9999.0, np.zeros((2, 3)))
    path = tmp_path / "g.asc"
    write_asc(grid, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "ncols 3"
    assert lines[1] == "nrows 2"
    assert lines[5].startswith("NODATA_value")


def test_cell_centers_orientation():
    grid = RasterGrid(0.0, 0.0, 10.0, -9999.0, np.zeros((2, 2)))
    cx, cy = grid.cell_centers()
    assert cy[0, 0] == 15.0 and cy[1, 0] == 5.0  # row 0 on top
    assert cx[0, 0] == 5.0 and cx[0, 1] == 15.0
    assert grid.cell_of(14.0, 14.0) == (0, 1)
    assert grid.cell_of(-1.0, 5.0) is None
