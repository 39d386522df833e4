"""Ordinary-kriging rasterization, natural-breaks classification, class areas.

Rasters follow the ESRI ASCII grid convention: row-major values with the
first row at the top (maximum y), lower-left corner origin, square cells.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from .errors import ValidationError

DEFAULT_NODATA = -9999.0
CLASS_NAMES_5 = ("very-low", "low", "moderate", "high", "very-high")


@dataclass
class GridSpec:
    x_ll: float
    y_ll: float
    cell_size: float
    ncols: int
    nrows: int

    def __post_init__(self):
        if self.cell_size <= 0:
            raise ValidationError("cell_size must be positive")
        if self.ncols < 1 or self.nrows < 1:
            raise ValidationError("grid must have at least one cell")

    @classmethod
    def covering(cls, xy: np.ndarray, cell_size: float, pad: float = 0.0) -> "GridSpec":
        """Smallest grid of the given cell size covering the points."""
        x0, y0 = xy[:, 0].min() - pad, xy[:, 1].min() - pad
        x1, y1 = xy[:, 0].max() + pad, xy[:, 1].max() + pad
        return cls(
            x_ll=float(x0),
            y_ll=float(y0),
            cell_size=float(cell_size),
            ncols=max(1, int(math.ceil((x1 - x0) / cell_size))),
            nrows=max(1, int(math.ceil((y1 - y0) / cell_size))),
        )


@dataclass
class RasterGrid:
    x_ll: float
    y_ll: float
    cell_size: float
    nodata: float
    values: np.ndarray  # (nrows, ncols), row 0 = top

    @property
    def nrows(self) -> int:
        return self.values.shape[0]

    @property
    def ncols(self) -> int:
        return self.values.shape[1]

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.x_ll, self.y_ll, self.cell_size, self.ncols, self.nrows)

    def mask(self) -> np.ndarray:
        """True where a cell holds data."""
        return self.values != self.nodata

    def cell_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """(x, y) center coordinates, same shape as values."""
        cols = np.arange(self.ncols)
        rows = np.arange(self.nrows)
        x = self.x_ll + (cols + 0.5) * self.cell_size
        y = self.y_ll + (self.nrows - rows - 0.5) * self.cell_size
        return np.meshgrid(x, y)

    def cell_of(self, x: float, y: float):
        """(row, col) containing the point, or None when outside the extent."""
        col = int(math.floor((x - self.x_ll) / self.cell_size))
        row_from_bottom = int(math.floor((y - self.y_ll) / self.cell_size))
        if not (0 <= col < self.ncols and 0 <= row_from_bottom < self.nrows):
            return None
        return self.nrows - 1 - row_from_bottom, col


def write_asc(grid: RasterGrid, path):
    """ESRI ASCII grid with 6 significant digits; round-trips bit-exactly."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"ncols {grid.ncols}\n")
        fh.write(f"nrows {grid.nrows}\n")
        fh.write(f"xllcorner {float(grid.x_ll)!r}\n")
        fh.write(f"yllcorner {float(grid.y_ll)!r}\n")
        fh.write(f"cellsize {float(grid.cell_size)!r}\n")
        fh.write(f"NODATA_value {grid.nodata:.6g}\n")
        for row in grid.values:
            fh.write(" ".join(f"{v:.6g}" for v in row))
            fh.write("\n")


def read_asc(path) -> RasterGrid:
    with open(path, encoding="utf-8") as fh:
        header = {}
        for _ in range(6):
            key, value = fh.readline().split()
            header[key.lower()] = value
        ncols, nrows = int(header["ncols"]), int(header["nrows"])
        values = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if values.shape != (nrows, ncols):
        raise ValidationError(
            f"{path}: value block {values.shape} does not match header "
            f"({nrows}, {ncols})"
        )
    return RasterGrid(
        x_ll=float(header["xllcorner"]),
        y_ll=float(header["yllcorner"]),
        cell_size=float(header["cellsize"]),
        nodata=float(header["nodata_value"]),
        values=values,
    )


# -------------------------------------------------------------------------- #
# variogram
# -------------------------------------------------------------------------- #


@dataclass
class VariogramModel:
    """Semivariance model gamma(h); gamma(0+) = nugget, plateau at sill."""

    family: str  # spherical | exponential | gaussian
    nugget: float
    sill: float
    range_: float

    def __post_init__(self):
        if self.family not in ("spherical", "exponential", "gaussian"):
            raise ValidationError(f"unknown variogram family {self.family!r}")
        if self.nugget < 0 or self.sill < self.nugget or self.range_ <= 0:
            raise ValidationError("variogram requires 0 <= nugget <= sill, range > 0")

    def gamma(self, h) -> np.ndarray:
        """Semivariance at lag h; gamma(0) = 0 by the kriging convention."""
        h = np.asarray(h, dtype=np.float64)
        psill = self.sill - self.nugget
        r = self.range_
        if self.family == "spherical":
            ratio = np.clip(h / r, 0.0, 1.0)
            structured = psill * (1.5 * ratio - 0.5 * ratio**3)
        elif self.family == "exponential":
            structured = psill * (1.0 - np.exp(-3.0 * h / r))
        else:
            structured = psill * (1.0 - np.exp(-3.0 * (h / r) ** 2))
        return np.where(h > 0.0, self.nugget + structured, 0.0)

    def to_json(self) -> dict:
        return {"family": self.family, "nugget": self.nugget, "sill": self.sill,
                "range": self.range_}

    @classmethod
    def from_json(cls, obj) -> "VariogramModel":
        return cls(obj["family"], obj["nugget"], obj["sill"], obj["range"])


def empirical_variogram(xy: np.ndarray, values: np.ndarray, n_bins: int = 15):
    """Equal-width lag bins up to half the maximum pairwise distance.

    Returns (lag centers, semivariances, pair counts) for non-empty bins.
    """
    n = xy.shape[0]
    iu, ju = np.triu_indices(n, k=1)
    d = np.sqrt(((xy[iu] - xy[ju]) ** 2).sum(axis=1))
    sv = 0.5 * (values[iu] - values[ju]) ** 2
    max_lag = d.max() / 2.0
    if max_lag <= 0:
        raise ValidationError("all points are coincident")
    edges = np.linspace(0.0, max_lag, n_bins + 1)
    which = np.digitize(d, edges[1:-1])
    keep = d <= max_lag
    centers, gammas, counts = [], [], []
    for b in range(n_bins):
        sel = keep & (which == b)
        if np.any(sel):
            centers.append(0.5 * (edges[b] + edges[b + 1]))
            gammas.append(float(sv[sel].mean()))
            counts.append(int(sel.sum()))
    return np.array(centers), np.array(gammas), np.array(counts)


def fit_variogram(points: np.ndarray, n_bins: int = 15,
                  family: str = "spherical") -> VariogramModel:
    """Weighted least-squares fit of (nugget, sill, range) to binned lags.

    `points` rows are (x, y, value). A constant field degenerates to the
    pure-nugget model with sill = nugget, under which kriging reproduces the
    constant everywhere.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 10:
        raise ValidationError(f"variogram fit needs >= 10 points, got {points.shape[0]}")
    xy, values = points[:, :2], points[:, 2]
    lags, gammas, counts = empirical_variogram(xy, values, n_bins)
    span = float(lags.max())
    if np.ptp(values) == 0.0 or gammas.max() == 0.0:
        return VariogramModel(family, 0.0, 0.0, max(span, 1.0))

    weights = np.sqrt(counts.astype(np.float64))

    def residuals(theta):
        nugget, psill, range_ = theta
        model = VariogramModel(family, max(nugget, 0.0),
                               max(nugget, 0.0) + max(psill, 0.0),
                               max(range_, 1e-9))
        return weights * (model.gamma(lags) - gammas)

    start = np.array([0.0, max(values.var(), gammas.mean()), span / 2.0])
    fit = least_squares(
        residuals, start,
        bounds=([0.0, 0.0, span * 1e-3], [np.inf, np.inf, span * 10.0]),
    )
    nugget, psill, range_ = fit.x
    return VariogramModel(family, float(nugget), float(nugget + psill), float(range_))


# -------------------------------------------------------------------------- #
# ordinary kriging
# -------------------------------------------------------------------------- #


@dataclass
class KrigeStats:
    n_singular: int = 0
    n_jittered: int = 0
    neighbors: int = 0


def _jitter_duplicates(xy: np.ndarray, scale: float):
    """Deterministically nudge exact-duplicate coordinates apart."""
    out = xy.copy()
    moved = 0
    seen: dict[tuple, int] = {}
    for i in range(out.shape[0]):
        key = (float(out[i, 0]), float(out[i, 1]))
        bump = seen.get(key, 0)
        if bump:
            out[i, 0] += scale * bump
            out[i, 1] += scale * bump * 0.5
            moved += 1
        seen[key] = bump + 1
    return out, moved


def ordinary_krige(points: np.ndarray, model: VariogramModel, spec: GridSpec,
                   m_neighbors: int = 32, dense: bool = False
                   ) -> tuple[RasterGrid, KrigeStats]:
    """Interpolate point values onto the grid with local ordinary kriging.

    Each cell solves the semivariance system over its m nearest samples,
    bordered by the unbiasedness row (weights sum to one via the Lagrange
    multiplier). `dense=True` uses every sample for oracle comparisons.
    Cells whose system stays singular after duplicate jittering are set to
    nodata and counted.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[0] < 3:
        raise ValidationError("kriging needs at least 3 points")
    xy, values = points[:, :2], points[:, 2]
    xy, n_jittered = _jitter_duplicates(xy, scale=1e-6 * spec.cell_size)
    n = xy.shape[0]
    m = n if dense else min(m_neighbors, n)
    stats = KrigeStats(n_jittered=n_jittered, neighbors=m)

    grid = RasterGrid(
        x_ll=spec.x_ll, y_ll=spec.y_ll, cell_size=spec.cell_size,
        nodata=DEFAULT_NODATA,
        values=np.full((spec.nrows, spec.ncols), DEFAULT_NODATA),
    )
    if model.sill == 0.0 and model.nugget == 0.0:
        grid.values[:, :] = values.mean()  # degenerate field: constant surface
        return grid, stats

    tree = cKDTree(xy)
    cx, cy = grid.cell_centers()
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    _, neighbor_idx = tree.query(centers, k=m)
    neighbor_idx = np.atleast_2d(neighbor_idx)
    if neighbor_idx.shape[0] == 1 and centers.shape[0] > 1:
        neighbor_idx = neighbor_idx.T

    flat = grid.values.ravel()
    for c in range(centers.shape[0]):
        idx = neighbor_idx[c]
        pts = xy[idx]
        d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
        system = np.empty((m + 1, m + 1))
        system[:m, :m] = model.gamma(d)
        system[m, :m] = 1.0
        system[:m, m] = 1.0
        system[m, m] = 0.0
        rhs = np.empty(m + 1)
        rhs[:m] = model.gamma(np.sqrt(((pts - centers[c]) ** 2).sum(axis=1)))
        rhs[m] = 1.0
        try:
            solution = np.linalg.solve(system, rhs)
        except np.linalg.LinAlgError:
            stats.n_singular += 1
            continue
        flat[c] = float(solution[:m] @ values[idx])
    return grid, stats


def krige_weights(points: np.ndarray, model: VariogramModel, spec: GridSpec,
                  cell: tuple[int, int], m_neighbors: int = 32,
                  dense: bool = False) -> np.ndarray:
    """Kriging weights for one cell, for the unbiasedness check in tests."""
    points = np.asarray(points, dtype=np.float64)
    xy, _ = _jitter_duplicates(points[:, :2], scale=1e-6 * spec.cell_size)
    n = xy.shape[0]
    m = n if dense else min(m_neighbors, n)
    row, col = cell
    center = np.array([
        spec.x_ll + (col + 0.5) * spec.cell_size,
        spec.y_ll + (spec.nrows - row - 0.5) * spec.cell_size,
    ])
    idx = cKDTree(xy).query(center, k=m)[1]
    idx = np.atleast_1d(idx)
    pts = xy[idx]
    d = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    system = np.zeros((m + 1, m + 1))
    system[:m, :m] = model.gamma(d)
    system[m, :m] = 1.0
    system[:m, m] = 1.0
    rhs = np.append(model.gamma(np.sqrt(((pts - center) ** 2).sum(axis=1))), 1.0)
    return np.linalg.solve(system, rhs)[:m]


# -------------------------------------------------------------------------- #
# natural breaks classification
# -------------------------------------------------------------------------- #


@dataclass
class ClassBreaks:
    edges: np.ndarray  # (k+1,), strictly ascending
    names: tuple = CLASS_NAMES_5

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        if np.any(np.diff(self.edges) <= 0):
            raise ValidationError("class edges must be strictly ascending")
        if len(self.names) != len(self.edges) - 1:
            self.names = tuple(f"class-{c + 1}" for c in range(len(self.edges) - 1))

    @property
    def k(self) -> int:
        return len(self.edges) - 1

    def to_json(self) -> dict:
        return {"edges": [float(e) for e in self.edges], "names": list(self.names)}

    @classmethod
    def from_json(cls, obj) -> "ClassBreaks":
        return cls(edges=np.array(obj["edges"]), names=tuple(obj["names"]))


def _class_ssd(prefix_w, prefix_wv, prefix_wv2, i, j):
    """Weighted within-class sum of squared deviations over values i..j."""
    w = prefix_w[j + 1] - prefix_w[i]
    s = prefix_wv[j + 1] - prefix_wv[i]
    s2 = prefix_wv2[j + 1] - prefix_wv2[i]
    return s2 - s * s / w


def jenks_breaks(values, k: int = 5) -> ClassBreaks:
    """Exact dynamic-programming partition minimizing within-class SSD.

    The DP runs over distinct values with multiplicity weights, which reaches
    the same optimal SSD as partitioning the raw sorted array (an optimal
    partition never needs to split a run of equal values). Interior break c
    is the midpoint between the last value of class c and the first value of
    class c+1, so the half-open classification rule reproduces the DP classes
    and the edges are always strictly ascending.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    distinct, counts = np.unique(values, return_counts=True)
    m = distinct.size
    if m < k:
        raise ValidationError(f"need at least {k} distinct values, got {m}")
    w = counts.astype(np.float64)
    prefix_w = np.concatenate([[0.0], np.cumsum(w)])
    prefix_wv = np.concatenate([[0.0], np.cumsum(w * distinct)])
    prefix_wv2 = np.concatenate([[0.0], np.cumsum(w * distinct**2)])

    cost = np.full((k + 1, m), np.inf)
    split = np.zeros((k + 1, m), dtype=np.int64)
    for j in range(m):
        cost[1, j] = _class_ssd(prefix_w, prefix_wv, prefix_wv2, 0, j)
    for c in range(2, k + 1):
        for j in range(c - 1, m):
            i_arr = np.arange(c - 1, j + 1)
            w_seg = prefix_w[j + 1] - prefix_w[i_arr]
            s_seg = prefix_wv[j + 1] - prefix_wv[i_arr]
            s2_seg = prefix_wv2[j + 1] - prefix_wv2[i_arr]
            cand = cost[c - 1, i_arr - 1] + s2_seg - s_seg * s_seg / w_seg
            t = int(np.argmin(cand))  # first minimum: deterministic split choice
            cost[c, j] = cand[t]
            split[c, j] = i_arr[t]

    boundaries = []  # index of the first distinct value in classes 2..k
    j = m - 1
    for c in range(k, 1, -1):
        i = split[c, j]
        boundaries.append(i)
        j = i - 1
    boundaries.reverse()
    interior = [(distinct[i - 1] + distinct[i]) / 2.0 for i in boundaries]
    edges = np.concatenate([[distinct[0]], interior, [distinct[-1]]])
    names = CLASS_NAMES_5 if k == 5 else tuple(f"class-{c + 1}" for c in range(k))
    return ClassBreaks(edges=edges, names=names)


def total_within_class_ssd(values, breaks: ClassBreaks) -> float:
    """SSD of the partition induced by classify(), for optimality checks."""
    values = np.asarray(values, dtype=np.float64)
    classes = np.searchsorted(breaks.edges[1:-1], values, side="right")
    total = 0.0
    for c in range(breaks.k):
        members = values[classes == c]
        if members.size:
            total += float(np.sum((members - members.mean()) ** 2))
    return total


def classify(raster: RasterGrid, breaks: ClassBreaks) -> tuple[RasterGrid, int]:
    """Map values into classes 1..k; intervals are [lo, hi), top class closed.

    Values outside [edges[0], edges[-1]] (and nodata cells) become nodata;
    the count of out-of-range cells is returned alongside.
    """
    values = raster.values
    data = raster.mask()
    out = np.full_like(values, DEFAULT_NODATA)
    in_range = data & (values >= breaks.edges[0]) & (values <= breaks.edges[-1])
    classes = np.searchsorted(breaks.edges[1:-1], values, side="right") + 1
    out[in_range] = classes[in_range]
    out_of_range = int(np.sum(data & ~in_range))
    grid = RasterGrid(raster.x_ll, raster.y_ll, raster.cell_size, DEFAULT_NODATA, out)
    return grid, out_of_range


def classify_values(values: np.ndarray, breaks: ClassBreaks) -> np.ndarray:
    """classify() for flat arrays; returns 1..k (no nodata handling)."""
    values = np.asarray(values, dtype=np.float64)
    if np.any(values < breaks.edges[0]) or np.any(values > breaks.edges[-1]):
        raise ValidationError("values outside the break range")
    return np.searchsorted(breaks.edges[1:-1], values, side="right") + 1


def class_area_report(class_raster: RasterGrid, k: int = 5) -> np.ndarray:
    """Percentage of non-nodata cells in each class 1..k; sums to 100."""
    data = class_raster.values[class_raster.mask()]
    if data.size == 0:
        raise ValidationError("raster is entirely nodata")
    counts = np.array([np.sum(data == c) for c in range(1, k + 1)], dtype=np.float64)
    return counts / data.size * 100.0


def write_class_area_csv(percentages, path, names=CLASS_NAMES_5, row_label="Area",
                         comment=None, extra_rows=()):
    """Class-area table: one row of percentages per label, columns = classes."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["metric"] + list(names))
        writer.writerow([row_label] + [f"{p:.4f}" for p in percentages])
        for label, row in extra_rows:
            writer.writerow([label] + [f"{p:.4f}" for p in row])


def write_breaks_json(breaks: ClassBreaks, path, extra=None):
    payload = breaks.to_json()
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
