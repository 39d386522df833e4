"""Synthetic watershed generator for tests and demos.

Builds a 10 km x 10 km basin with spatially smooth conditioning factors
(elevation trend with hills, a sine river channel, orographic precipitation,
categorical land cover / soil / lithology bands) and labels flooded points
where a latent score of the factors crosses its median, yielding a balanced,
nearly separable, spatially coherent classification task. A railway polyline
hugs the low-elevation corridor. No real-world data is involved.
"""

from __future__ import annotations

import numpy as np

from .data_ingest import FactorSpec, FeatureTable
from .scenario_exposure import ScenarioSpec, TrackGeometry

DOMAIN = 10_000.0  # meters

FACTORS = [
    FactorSpec("elevation"),
    FactorSpec("slope"),
    FactorSpec("convergence_index"),
    FactorSpec("dist_channel"),
    FactorSpec("precipitation"),
    FactorSpec("drainage_density"),
    FactorSpec("tpi"),
    FactorSpec("ndbi"),
    FactorSpec("lulc", kind="categorical-coded"),
    FactorSpec("soil_type", kind="categorical-coded"),
    FactorSpec("lithology", kind="categorical-coded"),
]


def _channel_vertices() -> np.ndarray:
    x = np.linspace(0.0, DOMAIN, 60)
    y = 3500.0 + 1200.0 * np.sin(2.0 * np.pi * x / DOMAIN * 1.3)
    return np.column_stack([x, y])


def _distance_to_polyline(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    """Min distance from each point to the polyline's segments."""
    best = np.full(points.shape[0], np.inf)
    for a, b in zip(vertices[:-1], vertices[1:]):
        ab = b - a
        denom = float(ab @ ab)
        t = np.clip(((points - a) @ ab) / denom, 0.0, 1.0)
        nearest = a + t[:, None] * ab
        d = np.sqrt(((points - nearest) ** 2).sum(axis=1))
        best = np.minimum(best, d)
    return best


def _bumps(points: np.ndarray, rng: np.random.Generator, count: int,
           scale: float, width: float) -> np.ndarray:
    """Sum of random Gaussian bumps, a cheap smooth random field."""
    centers = rng.uniform(0.0, DOMAIN, size=(count, 2))
    amplitudes = rng.uniform(-scale, scale, size=count)
    out = np.zeros(points.shape[0])
    for c, amp in zip(centers, amplitudes):
        d2 = ((points - c) ** 2).sum(axis=1)
        out += amp * np.exp(-d2 / (2.0 * width**2))
    return out


def generate_watershed(n_points: int = 2000, seed: int = 0) -> FeatureTable:
    """Labeled synthetic point table with the factor schema in FACTORS."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    xy = rng.uniform(0.0, DOMAIN, size=(n_points, 2))
    channel = _channel_vertices()

    northness = xy[:, 1] / DOMAIN
    elevation = 40.0 + 1400.0 * northness**1.4 + _bumps(xy, rng, 12, 180.0, 1500.0)
    elevation = np.clip(elevation, 1.0, None)
    slope = np.clip(
        0.9 * northness + 0.15 * np.abs(_bumps(xy, rng, 10, 2.0, 1200.0)), 0.0, None
    )
    convergence = _bumps(xy, rng, 14, 60.0, 1400.0)
    dist_channel = _distance_to_polyline(xy, channel)
    # mild orographic coupling only, so the flood association of rainfall
    # stays positive after the collinearity screen drops elevation proxies
    storm_belt = _bumps(xy, rng, 9, 1.0, 2200.0)
    storm_belt = (storm_belt - storm_belt.min()) / np.ptp(storm_belt)
    precipitation = (
        652.0
        + (943.0 - 652.0) * (0.25 * elevation / elevation.max() + 0.75 * storm_belt)
        + rng.normal(scale=8.0, size=n_points)
    )
    precipitation = np.clip(precipitation, 400.0, None)
    drainage = np.exp(-dist_channel / 2500.0) + 0.1 * _bumps(xy, rng, 8, 1.0, 1800.0)
    tpi = _bumps(xy, rng, 16, 1.0, 900.0)
    urban_center = np.array([7200.0, 1500.0])
    ndbi = np.clip(
        0.8 * np.exp(-((xy - urban_center) ** 2).sum(axis=1) / (2 * 1800.0**2))
        + rng.normal(scale=0.05, size=n_points),
        -1.0, 1.0,
    )
    lulc = np.where(ndbi > 0.35, 5.0,
                    np.where(elevation > 900.0, 2.0,
                             np.where(dist_channel < 600.0, 4.0, 7.0)))
    soil = np.floor(xy[:, 0] / (DOMAIN / 4.0)).clip(0, 3) + 1.0
    lithology = np.where(_bumps(xy, rng, 6, 1.0, 2500.0) > 0.0, 1.0, 2.0)

    def standardize(v):
        return (v - v.mean()) / v.std()

    latent = (
        -1.6 * standardize(elevation)
        - 1.5 * standardize(dist_channel)
        + 1.8 * standardize(precipitation)
        + 0.7 * standardize(convergence)
        + 0.5 * standardize(drainage)
        - 0.4 * standardize(slope)
        + rng.normal(scale=0.25, size=n_points)
    )
    labels = (latent > np.median(latent)).astype(np.int8)

    X = np.column_stack([
        elevation, slope, convergence, dist_channel, precipitation,
        drainage, tpi, ndbi, lulc, soil, lithology,
    ])
    return FeatureTable(
        ids=np.arange(n_points, dtype=np.int64),
        xy=xy,
        X=X,
        factors=list(FACTORS),
        labels=labels,
        crs_note="synthetic local metric CRS",
    )


def generate_track(seed: int = 0) -> TrackGeometry:
    """Railway polyline along the valley corridor plus a northern branch."""
    x = np.linspace(200.0, DOMAIN - 200.0, 45)
    y = 2600.0 + 900.0 * np.sin(2.0 * np.pi * x / DOMAIN * 1.1 + 0.4)
    main = np.column_stack([x, y])
    bx = np.linspace(5200.0, 6400.0, 12)
    by = np.linspace(y[int(len(x) * 0.55)], 8200.0, 12)
    branch = np.column_stack([bx, by])
    return TrackGeometry(polylines=[main, branch])


_QUANTILE_FACTORS = {"Q05": (0.55, 0.92), "Q50": (0.95, 1.40), "Q95": (1.35, 1.90)}
_RCP_SHIFT = {"RCP2.6": 0.0, "RCP4.5": 0.04, "RCP8.5": 0.10}


def generate_scenario(table: FeatureTable, rcp: str, quantile: str,
                      seed: int = 0) -> ScenarioSpec:
    """Projected precipitation (multiplicative, RCP-shifted) and land cover.

    Q95 multipliers approach double the baseline, Q05 falls well below it;
    projected land cover converts a share of rangeland to crops.
    """
    from .scenario_exposure import QUANTILES, RCP_LEVELS

    variant = RCP_LEVELS.index(rcp) * 8 + QUANTILES.index(quantile)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C37, variant]))
    lo, hi = _QUANTILE_FACTORS[quantile]
    shift = _RCP_SHIFT[rcp]
    precip = table.column("precipitation")
    multipliers = rng.uniform(lo + shift, hi + shift, size=table.n)
    projected_precip = precip * multipliers
    lulc = table.column("lulc").copy()
    rangeland = lulc == 7.0
    convert = rng.random(table.n) < 0.45
    lulc[rangeland & convert] = 4.0  # rangeland to crops
    return ScenarioSpec(
        rcp=rcp,
        quantile=quantile,
        precipitation={int(i): float(v) for i, v in zip(table.ids, projected_precip)},
        lulc={int(i): float(v) for i, v in zip(table.ids, lulc)},
        note=f"synthetic projection {rcp}/{quantile}, seed {seed}",
    )
