"""Future-scenario substitution, scenario inference, railway exposure.

Scenario specs replace the precipitation and land-cover columns point by
point; replacements are normalized with the baseline scaling parameters, so
projections beyond the historical range legitimately leave [0, 1] and are
flagged rather than clipped. Track exposure clips each polyline segment
against the raster's cell boundaries exactly and accounts lengths per class.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .data_ingest import FeatureTable, NormalizationParams, replace_features
from .errors import ValidationError
from .gt_model import GTConfig, GTParams, mc_dropout_predict
from .graph_construction import build_knn_graph, fit_pca
from .mapping import (
    ClassBreaks,
    GridSpec,
    RasterGrid,
    class_area_report,
    classify,
    fit_variogram,
    ordinary_krige,
)
from .positional_encoding import compute_pe, normalized_laplacian

RCP_LEVELS = ("RCP2.6", "RCP4.5", "RCP8.5")
QUANTILES = ("Q05", "Q50", "Q95")


@dataclass
class ScenarioSpec:
    rcp: str
    quantile: str
    precipitation: dict[int, float]  # point id -> mm/year
    lulc: dict[int, float]           # point id -> category code
    note: str = ""

    def __post_init__(self):
        if self.rcp not in RCP_LEVELS:
            raise ValidationError(f"rcp must be one of {RCP_LEVELS}, got {self.rcp!r}")
        if self.quantile not in QUANTILES:
            raise ValidationError(f"quantile must be one of {QUANTILES}")
        if any(v <= 0 for v in self.precipitation.values()):
            raise ValidationError("scenario precipitation must be positive")

    @property
    def tag(self) -> str:
        return f"{self.rcp.replace('.', '')}_{self.quantile}"


def _read_replacement_csv(path) -> dict[int, float]:
    out: dict[int, float] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows or [c.strip() for c in rows[0]] != ["id", "value"]:
        raise ValidationError(f"{path}: expected header 'id,value'")
    for row in rows[1:]:
        out[int(row[0])] = float(row[1])
    return out


def load_scenario_spec(path) -> ScenarioSpec:
    """JSON spec with per-point replacement CSV references (id,value)."""
    import os

    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    base = os.path.dirname(os.fspath(path))

    def resolve(name):
        p = obj[name]
        return p if os.path.isabs(p) else os.path.join(base, p)

    return ScenarioSpec(
        rcp=obj["rcp"],
        quantile=obj["quantile"],
        precipitation=_read_replacement_csv(resolve("precipitation_csv")),
        lulc=_read_replacement_csv(resolve("lulc_csv")),
        note=obj.get("note", ""),
    )


def write_scenario_spec(spec: ScenarioSpec, json_path, precip_csv, lulc_csv):
    for path, mapping in ((precip_csv, spec.precipitation), (lulc_csv, spec.lulc)):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id", "value"])
            for pid in sorted(mapping):
                writer.writerow([pid, repr(float(mapping[pid]))])
    import os

    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "rcp": spec.rcp,
                "quantile": spec.quantile,
                "precipitation_csv": os.path.basename(os.fspath(precip_csv)),
                "lulc_csv": os.path.basename(os.fspath(lulc_csv)),
                "note": spec.note,
            },
            fh, indent=2,
        )
        fh.write("\n")


def apply_scenario(table: FeatureTable, spec: ScenarioSpec, norm: NormalizationParams,
                   precipitation_column: str = "precipitation",
                   lulc_column: str = "lulc") -> tuple[FeatureTable, dict]:
    """Swap in scenario precipitation and land cover; every other column is untouched.

    `table` is the normalized baseline table; replacements arrive in raw
    units and are scaled with the baseline normalization parameters. Values
    leaving [0, 1] are allowed and reported in the flags.
    """
    names = table.factor_names
    for column in (precipitation_column, lulc_column):
        if column not in names:
            raise ValidationError(f"table has no {column!r} column")
    missing = [int(i) for i in table.ids
               if int(i) not in spec.precipitation or int(i) not in spec.lulc]
    if missing:
        raise ValidationError(
            f"scenario does not cover point ids {missing[:5]}"
            + ("..." if len(missing) > 5 else "")
        )

    X = table.X.copy()
    flags = {"out_of_range": {}, "rcp": spec.rcp, "quantile": spec.quantile}
    for column, mapping in ((precipitation_column, spec.precipitation),
                            (lulc_column, spec.lulc)):
        j = names.index(column)
        p = norm.names.index(column)
        lo, hi = norm.mins[p], norm.maxs[p]
        raw = np.array([mapping[int(i)] for i in table.ids], dtype=np.float64)
        scaled = (raw - lo) / (hi - lo)
        X[:, j] = scaled
        outside = np.nonzero((scaled < 0.0) | (scaled > 1.0))[0]
        if outside.size:
            flags["out_of_range"][column] = {
                "count": int(outside.size),
                "ids": [int(table.ids[i]) for i in outside[:10]],
                "max_scaled": float(scaled.max()),
                "min_scaled": float(scaled.min()),
            }
    return replace_features(table, X), flags


# -------------------------------------------------------------------------- #
# scenario inference
# -------------------------------------------------------------------------- #


@dataclass
class ScenarioResult:
    susceptibility: RasterGrid
    uncertainty: RasterGrid
    class_areas: np.ndarray  # percentages per class
    report: dict


def run_scenario(params: GTParams, table: FeatureTable, breaks: ClassBreaks,
                 grid: GridSpec, *, variance_target: float = 0.95,
                 passes: int = 100, seed: int = 0,
                 variogram_family: str = "spherical",
                 frozen: tuple | None = None,
                 scenario_meta: dict | None = None) -> ScenarioResult:
    """MC-dropout inference on a (scenario) table, kriged and classified.

    The similarity graph and positional encodings are rebuilt from the
    table's features with the trained model's construction settings, since
    feature substitution changes cosine similarity; pass `frozen=(graph, pe)`
    to reuse the baseline structure for comparison. Classification always
    uses the baseline class breaks.
    """
    config: GTConfig = params.config
    if frozen is None:
        pca = fit_pca(table.X, variance_target)
        graph = build_knn_graph(pca.transform(table.X), k=config.k_neighbours)
        pe = compute_pe(normalized_laplacian(graph), k_pe=config.num_eigenvectors)
    else:
        graph, pe = frozen
    mean, std = mc_dropout_predict(graph, table.X, pe, params, passes=passes, seed=seed)

    mean_points = np.column_stack([table.xy, mean])
    std_points = np.column_stack([table.xy, std])
    mean_model = fit_variogram(mean_points, family=variogram_family)
    std_model = fit_variogram(std_points, family=variogram_family)
    susceptibility, mean_stats = ordinary_krige(mean_points, mean_model, grid)
    uncertainty, std_stats = ordinary_krige(std_points, std_model, grid)
    # kriging can locally overshoot both bounded fields; clamp data cells
    data = susceptibility.mask()
    susceptibility.values[data] = np.clip(susceptibility.values[data],
                                          breaks.edges[0], breaks.edges[-1])
    udata = uncertainty.mask()
    uncertainty.values[udata] = np.clip(uncertainty.values[udata], 0.0, 0.5)
    classed, out_of_range = classify(susceptibility, breaks)
    areas = class_area_report(classed, k=breaks.k)
    report = {
        "scenario": scenario_meta or {},
        "passes": passes,
        "seed": seed,
        "graph_rebuilt": frozen is None,
        "class_areas_percent": [float(a) for a in areas],
        "out_of_range_cells": out_of_range,
        "kriging": {
            "mean_model": mean_model.to_json(),
            "std_model": std_model.to_json(),
            "singular_cells": mean_stats.n_singular + std_stats.n_singular,
        },
        "uncertainty_max": float(std.max()),
    }
    return ScenarioResult(susceptibility, uncertainty, areas, report)


# -------------------------------------------------------------------------- #
# railway track exposure
# -------------------------------------------------------------------------- #


@dataclass
class TrackGeometry:
    polylines: list[np.ndarray]  # each (m, 2), coordinates in raster CRS meters

    def __post_init__(self):
        for line in self.polylines:
            if line.shape[0] < 2:
                raise ValidationError("polylines need at least 2 vertices")

    @property
    def total_length(self) -> float:
        return float(sum(np.sum(np.sqrt((np.diff(p, axis=0) ** 2).sum(axis=1)))
                         for p in self.polylines))

    @classmethod
    def from_geojson(cls, path) -> "TrackGeometry":
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
        lines: list[np.ndarray] = []

        def collect(geometry):
            kind = geometry.get("type")
            if kind == "LineString":
                lines.append(np.asarray(geometry["coordinates"], dtype=np.float64))
            elif kind == "MultiLineString":
                for coords in geometry["coordinates"]:
                    lines.append(np.asarray(coords, dtype=np.float64))
            else:
                raise ValidationError(f"unsupported GeoJSON geometry {kind!r}")

        kind = obj.get("type")
        if kind == "FeatureCollection":
            for feat in obj["features"]:
                collect(feat["geometry"])
        elif kind == "Feature":
            collect(obj["geometry"])
        else:
            collect(obj)
        if not lines:
            raise ValidationError(f"{path}: no line geometries found")
        return cls(polylines=lines)


@dataclass
class ExposureReport:
    lengths_m: dict          # class name -> meters (plus "nodata" when hit)
    outside_m: float
    percentages: dict        # over in-extent length, sums to 100
    total_m: float

    def write_csv(self, path, comment=None):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["class", "length_m", "percent_of_in_extent"])
            for name, meters in self.lengths_m.items():
                writer.writerow([name, repr(float(meters)),
                                 repr(float(self.percentages[name]))])
            writer.writerow(["outside_extent", repr(float(self.outside_m)), ""])


def _segment_cell_lengths(p0, p1, raster: RasterGrid):
    """Split one segment at grid lines; yields ((row, col) or None, length)."""
    x0, y0 = p0
    x1, y1 = p1
    length = math.hypot(x1 - x0, y1 - y0)
    if length == 0.0:
        return
    ts = [0.0, 1.0]
    cs = raster.cell_size
    dx, dy = x1 - x0, y1 - y0
    if dx != 0.0:
        i_lo = math.floor((min(x0, x1) - raster.x_ll) / cs)
        i_hi = math.ceil((max(x0, x1) - raster.x_ll) / cs)
        for i in range(i_lo, i_hi + 1):
            t = (raster.x_ll + i * cs - x0) / dx
            if 0.0 < t < 1.0:
                ts.append(t)
    if dy != 0.0:
        j_lo = math.floor((min(y0, y1) - raster.y_ll) / cs)
        j_hi = math.ceil((max(y0, y1) - raster.y_ll) / cs)
        for j in range(j_lo, j_hi + 1):
            t = (raster.y_ll + j * cs - y0) / dy
            if 0.0 < t < 1.0:
                ts.append(t)
    ts = sorted(set(ts))
    for a, b in zip(ts[:-1], ts[1:]):
        tm = 0.5 * (a + b)
        cell = raster.cell_of(x0 + tm * dx, y0 + tm * dy)
        yield cell, (b - a) * length


def track_exposure(track: TrackGeometry, class_raster: RasterGrid,
                   class_names=None) -> ExposureReport:
    """Exact per-class track length accounting on a classified raster.

    Every polyline segment is clipped against the cell boundaries; each
    sub-segment's length is charged to its cell's class, to "nodata" for
    in-extent empty cells, or to the outside bucket. Percentages are over the
    in-extent length and sum to 100.
    """
    k = int(np.nanmax(np.where(class_raster.mask(), class_raster.values, 1.0)))
    if class_names is None:
        from .mapping import CLASS_NAMES_5

        class_names = CLASS_NAMES_5 if k <= 5 else tuple(
            f"class-{c + 1}" for c in range(k)
        )
    per_class = {name: 0.0 for name in class_names}
    nodata_m = 0.0
    outside_m = 0.0
    for line in track.polylines:
        for s in range(line.shape[0] - 1):
            for cell, seg_len in _segment_cell_lengths(line[s], line[s + 1], class_raster):
                if cell is None:
                    outside_m += seg_len
                    continue
                value = class_raster.values[cell]
                if value == class_raster.nodata:
                    nodata_m += seg_len
                else:
                    per_class[class_names[int(value) - 1]] += seg_len
    in_extent = sum(per_class.values()) + nodata_m
    if in_extent <= 0.0:
        raise ValidationError("track has zero length inside the raster extent")
    lengths = dict(per_class)
    if nodata_m > 0.0:
        lengths["nodata"] = nodata_m
    percentages = {name: meters / in_extent * 100.0 for name, meters in lengths.items()}
    return ExposureReport(
        lengths_m=lengths,
        outside_m=outside_m,
        percentages=percentages,
        total_m=track.total_length,
    )


def write_scenario_table_csv(rows: list[dict], path, comment=None,
                             class_names=None):
    """Combined scenario table: one Area row and one Length row per scenario."""
    from .mapping import CLASS_NAMES_5

    names = class_names or CLASS_NAMES_5
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["variable"] + list(names))
        for row in rows:
            writer.writerow([f"{row['rcp']}, {row['quantile']} (Area)"]
                            + [f"{v:.2f}" for v in row["area_percent"]])
        for row in rows:
            if row.get("length_percent") is None:
                continue
            writer.writerow([f"{row['rcp']}, {row['quantile']} (Length)"]
                            + [f"{v:.2f}" for v in row["length_percent"]])
