"""Balanced class sampling and deterministic train/validation/test splits."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data_ingest import FeatureTable
from .errors import ValidationError


@dataclass(frozen=True)
class SplitSpec:
    n_per_class: int
    ratios: tuple[float, float, float] = (0.7, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.n_per_class < 1:
            raise ValidationError("n_per_class must be positive")
        if len(self.ratios) != 3 or any(not 0.0 < r < 1.0 for r in self.ratios):
            raise ValidationError("ratios must be three values each in (0, 1)")
        if abs(sum(self.ratios) - 1.0) > 1e-9:
            raise ValidationError("ratios must sum to 1")


@dataclass
class DataSplit:
    train: np.ndarray  # point ids
    val: np.ndarray
    test: np.ndarray
    provenance: dict

    @property
    def all_ids(self) -> np.ndarray:
        return np.concatenate([self.train, self.val, self.test])

    def to_json(self) -> dict:
        return {
            "train": [int(i) for i in self.train],
            "val": [int(i) for i in self.val],
            "test": [int(i) for i in self.test],
            "provenance": self.provenance,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)

    @classmethod
    def from_json(cls, obj: dict) -> "DataSplit":
        return cls(
            train=np.array(obj["train"], dtype=np.int64),
            val=np.array(obj["val"], dtype=np.int64),
            test=np.array(obj["test"], dtype=np.int64),
            provenance=obj.get("provenance", {}),
        )


def _split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    # floor each share, then hand out the remainder in order train -> val -> test
    sizes = [int(np.floor(n * r)) for r in ratios]
    leftover = n - sum(sizes)
    for i in range(leftover):
        sizes[i % 3] += 1
    return tuple(sizes)


def balanced_sample(table: FeatureTable, spec: SplitSpec) -> DataSplit:
    """Draw n_per_class ids per class and split them by the ratio rule.

    The draw is a seeded uniform shuffle without replacement (integer
    permutation only, so results are identical across platforms). Splits are
    stratified: the per-class size rule is applied inside each class, which
    keeps class counts within each split member equal.
    """
    if table.labels is None:
        raise ValidationError("table has no labels; cannot sample classes")
    rng = np.random.default_rng(spec.seed)
    per_class_ids: dict[int, np.ndarray] = {}
    for cls in (1, 0):
        ids = np.sort(table.ids[table.labels == cls])
        if ids.size < spec.n_per_class:
            raise ValidationError(
                f"class {cls} has {ids.size} points, need {spec.n_per_class}"
            )
        per_class_ids[cls] = ids[rng.permutation(ids.size)][: spec.n_per_class]

    sizes = _split_sizes(spec.n_per_class, spec.ratios)
    parts = {"train": [], "val": [], "test": []}
    for cls in (1, 0):
        drawn = per_class_ids[cls]
        a, b = sizes[0], sizes[0] + sizes[1]
        parts["train"].append(drawn[:a])
        parts["val"].append(drawn[a:b])
        parts["test"].append(drawn[b:])
    provenance = {
        "seed": spec.seed,
        "n_per_class": spec.n_per_class,
        "ratios": list(spec.ratios),
        "per_class_sizes": {"train": sizes[0], "val": sizes[1], "test": sizes[2]},
    }
    return DataSplit(
        train=np.concatenate(parts["train"]),
        val=np.concatenate(parts["val"]),
        test=np.concatenate(parts["test"]),
        provenance=provenance,
    )
