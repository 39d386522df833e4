"""Distance-threshold spatial weights with global autocorrelation statistics.

Weights are binary: w_ij = 1 when 0 < d_ij < threshold (Euclidean, projected
meters), 0 otherwise, symmetric with a zero diagonal. Both the clustering
statistic (expected -1/(n-1) under randomness) and the dispersion statistic
(expected 1) come with either normality-assumption z-scores or seeded
permutation inference.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class SpatialWeights:
    n: int
    threshold_m: float
    pair_i: np.ndarray  # (s0,) ordered pairs, both directions present
    pair_j: np.ndarray
    isolated: np.ndarray  # indices with no neighbor inside the threshold

    @property
    def s0(self) -> float:
        """Sum of all weights = count of ordered neighbor pairs."""
        return float(self.pair_i.shape[0])

    def degrees(self) -> np.ndarray:
        return np.bincount(self.pair_i, minlength=self.n).astype(np.float64)

    def lag(self, values: np.ndarray) -> np.ndarray:
        """Spatially lagged values: row sums of W applied to `values`."""
        out = np.zeros(self.n)
        np.add.at(out, self.pair_i, np.asarray(values, dtype=np.float64)[self.pair_j])
        return out


@dataclass
class AutocorrResult:
    statistic: float
    expected: float
    z_score: float
    p_value: float
    s0: float
    method: str  # "analytical_normal" or "permutation"
    scatter_z: np.ndarray | None = None    # standardized values (clustering stat)
    scatter_lag: np.ndarray | None = None  # spatial lag of the standardized values

    def to_json(self) -> dict:
        return {
            "statistic": self.statistic,
            "expected": self.expected,
            "z_score": self.z_score,
            "p_value": self.p_value,
            "s0": self.s0,
            "method": self.method,
        }


def build_weights(coords: np.ndarray, threshold: float = 2000.0) -> SpatialWeights:
    """Binary distance-band weights; isolated points are flagged, not dropped."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 2:
        raise ValidationError("need at least 2 points for spatial weights")
    if threshold <= 0:
        raise ValidationError("threshold must be positive")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt((diff**2).sum(axis=2))
    mask = (dist > 0.0) & (dist < threshold)
    np.fill_diagonal(mask, False)
    pair_i, pair_j = np.nonzero(mask)
    degrees = np.bincount(pair_i, minlength=n)
    return SpatialWeights(
        n=n,
        threshold_m=float(threshold),
        pair_i=pair_i.astype(np.int64),
        pair_j=pair_j.astype(np.int64),
        isolated=np.nonzero(degrees == 0)[0].astype(np.int64),
    )


def _common_checks(values: np.ndarray, weights: SpatialWeights) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (weights.n,):
        raise ValidationError("values length does not match weights")
    if weights.s0 == 0:
        raise ValidationError("no neighbors inside the distance threshold")
    if np.ptp(values) == 0.0:
        raise ValidationError("constant field: autocorrelation undefined")
    return values


def _moran_statistic(values, weights):
    centered = values - values.mean()
    numerator = float(np.sum(centered[weights.pair_i] * centered[weights.pair_j]))
    denominator = float(np.sum(centered**2))
    return (weights.n / weights.s0) * numerator / denominator


def _geary_statistic(values, weights):
    diff = values[weights.pair_i] - values[weights.pair_j]
    centered = values - values.mean()
    return (
        (weights.n - 1)
        / (2.0 * weights.s0)
        * float(np.sum(diff**2))
        / float(np.sum(centered**2))
    )


def _s1_s2(weights: SpatialWeights) -> tuple[float, float]:
    # binary symmetric weights: (w_ij + w_ji) = 2 on every stored pair
    s1 = 2.0 * weights.s0
    deg = weights.degrees()
    s2 = float(np.sum((2.0 * deg) ** 2))
    return s1, s2


def _permutation_pvalue(observed, draws):
    center = draws.mean()
    extreme = np.sum(np.abs(draws - center) >= abs(observed - center) - 1e-15)
    p = (1.0 + float(extreme)) / (len(draws) + 1.0)
    sd = draws.std()
    z = (observed - center) / sd if sd > 0 else math.inf * np.sign(observed - center)
    return p, float(z)


def morans_i(values, weights: SpatialWeights, inference: str = "analytical_normal",
             n_perm: int = 999, seed: int = 0) -> AutocorrResult:
    """Global clustering statistic with scatterplot data.

    statistic = (n / S0) * sum_ij w_ij (Y_i - mean)(Y_j - mean) / sum_i (Y_i - mean)^2

    Also returns the standardized values and their spatial lags so the
    cluster scatterplot can be drawn downstream.
    """
    values = _common_checks(values, weights)
    n = weights.n
    statistic = _moran_statistic(values, weights)
    expected = -1.0 / (n - 1)
    sigma = values.std()
    scatter_z = (values - values.mean()) / sigma
    scatter_lag = weights.lag(scatter_z)

    if inference == "analytical_normal":
        s0, (s1, s2) = weights.s0, _s1_s2(weights)
        variance = (n**2 * s1 - n * s2 + 3.0 * s0**2) / ((n**2 - 1.0) * s0**2) - expected**2
        z = (statistic - expected) / math.sqrt(variance)
        p = math.erfc(abs(z) / math.sqrt(2.0))  # two-sided normal tail
    elif inference == "permutation":
        rng = np.random.default_rng(seed)
        draws = np.empty(n_perm)
        for t in range(n_perm):
            draws[t] = _moran_statistic(values[rng.permutation(n)], weights)
        p, z = _permutation_pvalue(statistic, draws)
    else:
        raise ValidationError(f"unknown inference method {inference!r}")
    return AutocorrResult(statistic, expected, float(z), float(p), weights.s0,
                          inference, scatter_z, scatter_lag)


def gearys_c(values, weights: SpatialWeights, inference: str = "analytical_normal",
             n_perm: int = 999, seed: int = 0) -> AutocorrResult:
    """Global dispersion statistic; below 1 means clustering.

    statistic = ((n-1) / (2 S0)) * sum_ij w_ij (Y_i - Y_j)^2 / sum_i (Y_i - mean)^2
    """
    values = _common_checks(values, weights)
    n = weights.n
    statistic = _geary_statistic(values, weights)
    expected = 1.0

    if inference == "analytical_normal":
        s0, (s1, s2) = weights.s0, _s1_s2(weights)
        variance = ((2.0 * s1 + s2) * (n - 1) - 4.0 * s0**2) / (2.0 * (n + 1) * s0**2)
        z = (statistic - expected) / math.sqrt(variance)
        p = math.erfc(abs(z) / math.sqrt(2.0))
    elif inference == "permutation":
        rng = np.random.default_rng(seed)
        draws = np.empty(n_perm)
        for t in range(n_perm):
            draws[t] = _geary_statistic(values[rng.permutation(n)], weights)
        p, z = _permutation_pvalue(statistic, draws)
    else:
        raise ValidationError(f"unknown inference method {inference!r}")
    return AutocorrResult(statistic, expected, float(z), float(p), weights.s0, inference)


def write_moran_scatter_csv(result: AutocorrResult, path, labels=None, comment=None):
    """Plot-ready scatter data: standardized value, spatial lag, class label."""
    if result.scatter_z is None:
        raise ValidationError("result carries no scatterplot data")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        writer.writerow(["z_value", "spatial_lag", "label"])
        for i in range(len(result.scatter_z)):
            label = "" if labels is None else labels[i]
            writer.writerow([repr(float(result.scatter_z[i])),
                             repr(float(result.scatter_lag[i])), label])


def write_autocorr_json(results: dict[str, AutocorrResult], path, extra=None):
    payload = {name: r.to_json() for name, r in results.items()}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")
