"""Directed cosine-similarity k-NN graph over PCA-reduced node features."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError


@dataclass
class PCAModel:
    """Principal axes of the sample covariance, truncated at a variance target."""

    mean: np.ndarray                      # (F,)
    components: np.ndarray                # (F, d), orthonormal columns
    explained_variance_ratio: np.ndarray  # (d,), non-increasing

    @property
    def d(self) -> int:
        return self.components.shape[1]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.components


@dataclass
class Graph:
    """Directed weighted k-NN graph with per-node self-loops.

    Edges are stored as parallel (src, dst, weight) arrays grouped by source
    node, self-loop first; the layout is deterministic for identical inputs.
    """

    n: int
    src: np.ndarray     # (E,) int64
    dst: np.ndarray     # (E,) int64
    weight: np.ndarray  # (E,) float64 in [-1, 1]
    k: int

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.n)

    def neighbor_sets(self) -> list[set]:
        """Out-neighbors of each node, excluding the self-loop."""
        sets = [set() for _ in range(self.n)]
        for s, d in zip(self.src, self.dst):
            if s != d:
                sets[s].add(int(d))
        return sets

    def write_tsv(self, path, header_path=None):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("src\tdst\tweight\n")
            for s, d, w in zip(self.src, self.dst, self.weight):
                fh.write(f"{int(s)}\t{int(d)}\t{float(w)!r}\n")
        if header_path is not None:
            with open(header_path, "w", encoding="utf-8") as fh:
                json.dump({"n": self.n, "k": self.k}, fh, indent=2)
                fh.write("\n")

    @classmethod
    def read_tsv(cls, path, header_path) -> "Graph":
        with open(header_path, encoding="utf-8") as fh:
            head = json.load(fh)
        src, dst, weight = [], [], []
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                s, d, w = line.split("\t")
                src.append(int(s))
                dst.append(int(d))
                weight.append(float(w))
        return cls(
            n=int(head["n"]),
            src=np.array(src, dtype=np.int64),
            dst=np.array(dst, dtype=np.int64),
            weight=np.array(weight, dtype=np.float64),
            k=int(head["k"]),
        )


def fit_pca(X: np.ndarray, variance_target: float = 0.95) -> PCAModel:
    """Eigendecomposition of the sample covariance of centered X.

    Keeps the smallest number of leading components whose cumulative
    explained-variance ratio reaches the target.
    """
    X = np.asarray(X, dtype=np.float64)
    n, F = X.shape
    if n < 2:
        raise ValidationError("PCA needs at least 2 rows")
    if not np.all(np.isfinite(X)):
        raise ValidationError("PCA input contains non-finite values")
    if not 0.0 < variance_target <= 1.0:
        raise ValidationError("variance_target must be in (0, 1]")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = (Xc.T @ Xc) / (n - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = np.clip(eigvals[order], 0.0, None)
    eigvecs = eigvecs[:, order]
    total = eigvals.sum()
    if total <= 0.0:
        raise ValidationError("zero total variance; PCA undefined")
    ratios = eigvals / total
    # numerical-rank cutoff so variance_target = 1.0 returns rank(X_centered)
    rank = int(np.sum(eigvals > eigvals[0] * 1e-12))
    cumulative = np.cumsum(ratios[:rank])
    d = int(np.searchsorted(cumulative, variance_target - 1e-12) + 1)
    d = min(d, rank)
    return PCAModel(mean=mean, components=eigvecs[:, :d], explained_variance_ratio=ratios[:d])


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|), clamped to [-1, 1] against rounding."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValidationError("cosine similarity undefined for a zero vector")
    return float(np.clip(u @ v / (nu * nv), -1.0, 1.0))


def build_knn_graph(Z: np.ndarray, k: int) -> Graph:
    """Self-loop plus directed edges to each node's k most similar nodes.

    Similarity is cosine over the rows of Z; ties are broken by the smaller
    node id, and raw (possibly negative) similarities become edge weights.
    """
    Z = np.asarray(Z, dtype=np.float64)
    n = Z.shape[0]
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k={k} out of range for n={n}")
    norms = np.linalg.norm(Z, axis=1)
    if np.any(norms == 0.0):
        raise ValidationError("zero-norm rows make cosine similarity undefined")
    Zn = Z / norms[:, None]
    S = np.clip(Zn @ Zn.T, -1.0, 1.0)

    src = np.empty(n * (k + 1), dtype=np.int64)
    dst = np.empty(n * (k + 1), dtype=np.int64)
    weight = np.empty(n * (k + 1), dtype=np.float64)
    for i in range(n):
        row = S[i].copy()
        row[i] = -np.inf  # exclude self from the neighbor competition
        # stable sort on descending similarity = ties resolved by smaller id
        top = np.argsort(-row, kind="stable")[:k]
        base = i * (k + 1)
        src[base] = dst[base] = i
        weight[base] = 1.0
        src[base + 1 : base + 1 + k] = i
        dst[base + 1 : base + 1 + k] = top
        weight[base + 1 : base + 1 + k] = row[top]
    return Graph(n=n, src=src, dst=dst, weight=weight, k=k)
