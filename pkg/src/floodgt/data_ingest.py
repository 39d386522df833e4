"""Tabular point ingestion, min-max normalization, and collinearity screening.

Input CSV layout: ``id,x,y,<factor1>,...,<factorF>[,label]`` with a header
row, UTF-8, decimal points, no thousands separators. Lines starting with
``#`` are treated as provenance comments and skipped.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ParseError, ValidationError


@dataclass(frozen=True)
class FactorSpec:
    """One conditioning factor: a column name and its kind."""

    name: str
    kind: str = "continuous"  # or "categorical-coded"

    def __post_init__(self):
        if self.kind not in ("continuous", "categorical-coded"):
            raise ValidationError(f"unknown factor kind {self.kind!r} for {self.name!r}")


@dataclass
class FeatureTable:
    """Georeferenced points with named factor columns and optional 0/1 label."""

    ids: np.ndarray          # (n,) int64, unique
    xy: np.ndarray           # (n, 2) float64, projected meters
    X: np.ndarray            # (n, F) float64
    factors: list[FactorSpec]
    labels: np.ndarray | None = None  # (n,) int8 in {0, 1}
    crs_note: str = ""

    def __post_init__(self):
        self.validate()

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def factor_names(self) -> list[str]:
        return [f.name for f in self.factors]

    def validate(self):
        n = self.ids.shape[0]
        if self.X.shape != (n, len(self.factors)):
            raise ValidationError(
                f"feature matrix shape {self.X.shape} inconsistent with "
                f"{n} points and {len(self.factors)} factors"
            )
        if self.X.shape[1] < 1:
            raise ValidationError("at least one factor column is required")
        if self.xy.shape != (n, 2):
            raise ValidationError("coordinate array must be (n, 2)")
        if len(np.unique(self.ids)) != n:
            raise ValidationError("point ids are not unique")
        if not np.all(np.isfinite(self.xy)):
            raise ValidationError("non-finite coordinates")
        if not np.all(np.isfinite(self.X)):
            raise ValidationError("non-finite feature values")
        if self.labels is not None and not np.all(np.isin(self.labels, (0, 1))):
            raise ValidationError("labels must be exactly 0 or 1")

    def column(self, name: str) -> np.ndarray:
        return self.X[:, self.factor_names.index(name)]

    def subset(self, ids: np.ndarray) -> "FeatureTable":
        """Rows for the given ids, in the order requested."""
        lookup = {int(i): k for k, i in enumerate(self.ids)}
        try:
            rows = np.array([lookup[int(i)] for i in ids], dtype=np.int64)
        except KeyError as exc:
            raise ValidationError(f"unknown point id {exc.args[0]}") from exc
        return FeatureTable(
            ids=self.ids[rows].copy(),
            xy=self.xy[rows].copy(),
            X=self.X[rows].copy(),
            factors=list(self.factors),
            labels=None if self.labels is None else self.labels[rows].copy(),
            crs_note=self.crs_note,
        )


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature min/max of the table the scaling was fitted on."""

    names: tuple
    mins: np.ndarray
    maxs: np.ndarray

    def __post_init__(self):
        if np.any(self.maxs < self.mins):
            raise ValidationError("normalization max < min")

    @property
    def constant_features(self) -> list[str]:
        return [n for n, lo, hi in zip(self.names, self.mins, self.maxs) if hi == lo]

    def to_json(self) -> dict:
        return {
            "features": [
                {"name": n, "min": float(lo), "max": float(hi)}
                for n, lo, hi in zip(self.names, self.mins, self.maxs)
            ]
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NormalizationParams":
        feats = obj["features"]
        return cls(
            names=tuple(f["name"] for f in feats),
            mins=np.array([f["min"] for f in feats], dtype=np.float64),
            maxs=np.array([f["max"] for f in feats], dtype=np.float64),
        )


@dataclass
class CollinearityReport:
    """VIF / tolerance per feature plus the pairwise Pearson matrix."""

    names: list[str]
    vif: np.ndarray        # (F,), >= 1, may contain +inf
    tol: np.ndarray        # 1 / vif (0 where vif is infinite)
    pairwise_r: np.ndarray  # (F, F) symmetric, unit diagonal

    def to_json(self) -> dict:
        feats = []
        for name, v, t in zip(self.names, self.vif, self.tol):
            feats.append(
                {
                    "name": name,
                    "vif": "inf" if math.isinf(v) else float(v),
                    "tol": float(t),
                }
            )
        # strict JSON: non-finite correlations (constant columns) become null
        pairwise = [[float(v) if math.isfinite(v) else None for v in row]
                    for row in self.pairwise_r]
        return {"features": feats, "pairwise_r": pairwise}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


# -------------------------------------------------------------------------- #
# loading
# -------------------------------------------------------------------------- #


def load_feature_table(path, schema: list[FactorSpec], crs_note: str = "") -> FeatureTable:
    """Parse a point CSV against the given factor schema.

    Rejects missing and malformed cells with the offending row (1-based data
    row index) and column name; duplicate ids and out-of-range labels raise
    ValidationError.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].lstrip().startswith("#")]
    if not rows:
        raise ParseError(f"{path}: no data rows")
    header = [h.strip() for h in rows[0]]
    names = [f.name for f in schema]
    expected = ["id", "x", "y"] + names
    has_label = header == expected + ["label"]
    if not has_label and header != expected:
        raise ParseError(
            f"{path}: header {header} does not match schema {expected} (optionally + label)"
        )
    data_rows = rows[1:]
    if not data_rows:
        raise ParseError(f"{path}: no data rows")

    n = len(data_rows)
    ids = np.empty(n, dtype=np.int64)
    xy = np.empty((n, 2), dtype=np.float64)
    X = np.empty((n, len(names)), dtype=np.float64)
    labels = np.empty(n, dtype=np.int8) if has_label else None

    def cell(row_idx, row, col_idx):
        raw = row[col_idx].strip()
        if raw == "":
            raise ParseError(
                f"{path}: missing value at data row {row_idx + 1}, column {header[col_idx]!r}"
            )
        try:
            return float(raw)
        except ValueError:
            raise ParseError(
                f"{path}: malformed numeric cell {raw!r} at data row {row_idx + 1}, "
                f"column {header[col_idx]!r}"
            ) from None

    for i, row in enumerate(data_rows):
        if len(row) != len(header):
            raise ParseError(
                f"{path}: data row {i + 1} has {len(row)} cells, expected {len(header)}"
            )
        ids[i] = int(cell(i, row, 0))
        xy[i, 0] = cell(i, row, 1)
        xy[i, 1] = cell(i, row, 2)
        for j in range(len(names)):
            X[i, j] = cell(i, row, 3 + j)
        if has_label:
            val = cell(i, row, len(header) - 1)
            if val not in (0.0, 1.0):
                raise ValidationError(
                    f"{path}: label {val} at data row {i + 1} is not 0 or 1"
                )
            labels[i] = int(val)

    dup = _first_duplicate(ids)
    if dup is not None:
        raise ValidationError(f"{path}: duplicate id {dup}")
    return FeatureTable(ids=ids, xy=xy, X=X, factors=list(schema), labels=labels, crs_note=crs_note)


def _first_duplicate(ids: np.ndarray):
    seen = set()
    for i in ids:
        if int(i) in seen:
            return int(i)
        seen.add(int(i))
    return None


def write_feature_table(table: FeatureTable, path, comment: str | None = None):
    """Inverse of load_feature_table; floats are written with repr precision."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if comment:
            fh.write(f"# {comment}\n")
        writer = csv.writer(fh)
        header = ["id", "x", "y"] + table.factor_names
        if table.labels is not None:
            header.append("label")
        writer.writerow(header)
        for i in range(table.n):
            row = [int(table.ids[i]), repr(float(table.xy[i, 0])), repr(float(table.xy[i, 1]))]
            row += [repr(float(v)) for v in table.X[i]]
            if table.labels is not None:
                row.append(int(table.labels[i]))
            writer.writerow(row)


# -------------------------------------------------------------------------- #
# normalization
# -------------------------------------------------------------------------- #


def min_max_normalize(table: FeatureTable) -> tuple[FeatureTable, NormalizationParams]:
    """Scale every factor column to [0, 1]; errors on constant columns."""
    mins = table.X.min(axis=0)
    maxs = table.X.max(axis=0)
    constant = np.nonzero(maxs == mins)[0]
    if constant.size:
        names = ", ".join(table.factor_names[j] for j in constant)
        raise ValidationError(f"constant feature (zero range): {names}")
    params = NormalizationParams(tuple(table.factor_names), mins, maxs)
    return apply_normalization(table, params), params


def apply_normalization(table: FeatureTable, params: NormalizationParams) -> FeatureTable:
    """Apply stored min/max scaling; bitwise-reproducible for a fixed table."""
    if tuple(table.factor_names) != params.names:
        raise ValidationError("normalization params do not match table factors")
    span = params.maxs - params.mins
    if np.any(span == 0):
        raise ValidationError(
            "constant feature in normalization params: "
            + ", ".join(params.constant_features)
        )
    Xn = (table.X - params.mins) / span
    return replace_features(table, Xn)


def replace_features(table: FeatureTable, X: np.ndarray) -> FeatureTable:
    return FeatureTable(
        ids=table.ids.copy(),
        xy=table.xy.copy(),
        X=np.asarray(X, dtype=np.float64),
        factors=list(table.factors),
        labels=None if table.labels is None else table.labels.copy(),
        crs_note=table.crs_note,
    )


# -------------------------------------------------------------------------- #
# collinearity
# -------------------------------------------------------------------------- #

_EXACT_FIT = 1e-12  # 1 - R^2 below this is treated as exact linear dependence


def compute_collinearity(table: FeatureTable) -> CollinearityReport:
    """VIF_j = 1 / (1 - R^2_j) from OLS of column j on the remaining columns.

    The regression includes an intercept; columns are centered first, which
    leaves R^2 unchanged but improves conditioning. Exact linear dependence
    is reported as vif = +inf rather than raised.
    """
    n, F = table.X.shape
    if n <= F + 1:
        raise ValidationError(f"need n > F + 1 points for VIF (n={n}, F={F})")
    Xc = table.X - table.X.mean(axis=0)
    vif = np.empty(F)
    for j in range(F):
        y = Xc[:, j]
        tss = float(y @ y)
        if tss < 1e-300:
            vif[j] = np.inf  # constant column: collinear with the intercept
            continue
        A = np.column_stack([np.ones(n), np.delete(Xc, j, axis=1)])
        coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
        resid = y - A @ coef
        r2 = 1.0 - float(resid @ resid) / tss
        vif[j] = np.inf if 1.0 - r2 <= _EXACT_FIT else 1.0 / (1.0 - r2)
    tol = np.where(np.isinf(vif), 0.0, 1.0 / vif)
    with np.errstate(invalid="ignore"):
        pairwise = np.corrcoef(table.X, rowvar=False)
    pairwise = np.atleast_2d(pairwise)
    np.fill_diagonal(pairwise, 1.0)
    return CollinearityReport(list(table.factor_names), vif, tol, pairwise)


def filter_collinear(
    table: FeatureTable,
    report: CollinearityReport | None = None,
    vif_max: float = 10.0,
    keep_list: tuple = (),
) -> FeatureTable:
    """Iteratively drop the worst non-kept feature until all VIF <= vif_max.

    VIFs are recomputed after every drop; features in keep_list are never
    removed regardless of their VIF.
    """
    unknown = set(keep_list) - set(table.factor_names)
    if unknown:
        raise ValidationError(f"keep_list names not in table: {sorted(unknown)}")
    current = table
    report = report or compute_collinearity(current)
    while True:
        candidates = [
            (v, i)
            for i, (name, v) in enumerate(zip(report.names, report.vif))
            if name not in keep_list and v > vif_max
        ]
        if not candidates:
            return current
        # highest VIF first (inf beats finite); ties broken by column order
        _, drop = max(candidates, key=lambda t: (t[0], -t[1]))
        keep_cols = [i for i in range(len(report.names)) if i != drop]
        current = FeatureTable(
            ids=current.ids.copy(),
            xy=current.xy.copy(),
            X=current.X[:, keep_cols],
            factors=[current.factors[i] for i in keep_cols],
            labels=None if current.labels is None else current.labels.copy(),
            crs_note=current.crs_note,
        )
        report = compute_collinearity(current)
