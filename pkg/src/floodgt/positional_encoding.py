"""Laplacian positional encodings from the similarity graph.

The directed graph is symmetrized by averaging, self-loops are dropped and
negative weights clamped to zero so the symmetric normalized Laplacian keeps
its [0, 2] spectrum. Eigenvectors of the smallest non-trivial eigenvalues
(one zero eigenvalue per connected component is skipped) become per-node
positional features.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .graph_construction import Graph

_TRIVIAL_EIGENVALUE = 1e-8


@dataclass
class LaplacianPE:
    vectors: np.ndarray      # (n, k_pe), unit-norm mutually orthogonal columns
    eigenvalues: np.ndarray  # (k_pe,), ascending, within [0, 2]
    n_components: int        # count of near-zero eigenvalues detected

    @property
    def k(self) -> int:
        return self.vectors.shape[1]

    def write_csv(self, path, node_ids=None, comment=None):
        n = self.vectors.shape[0]
        ids = np.arange(n) if node_ids is None else node_ids
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["node_id"] + [f"pe_{j + 1}" for j in range(self.k)])
            for i in range(n):
                writer.writerow([int(ids[i])] + [repr(float(v)) for v in self.vectors[i]])


def normalized_laplacian(graph: Graph) -> np.ndarray:
    """Dense symmetric normalized Laplacian of the symmetrized graph.

    Rows and columns of zero-degree nodes are zero, so each isolated node
    contributes one trivial (zero) eigenvalue, matching the component count.
    """
    if graph.n == 0:
        raise ValidationError("empty graph")
    n = graph.n
    A = np.zeros((n, n))
    off = graph.src != graph.dst
    A[graph.src[off], graph.dst[off]] = graph.weight[off]
    A = 0.5 * (A + A.T)
    np.clip(A, 0.0, None, out=A)
    deg = A.sum(axis=1)
    inv_sqrt = np.where(deg > 0.0, deg, 1.0) ** -0.5
    inv_sqrt[deg == 0.0] = 0.0
    M = inv_sqrt[:, None] * A * inv_sqrt[None, :]
    L = np.diag((deg > 0.0).astype(np.float64)) - M
    return 0.5 * (L + L.T)


def compute_pe(L: np.ndarray, k_pe: int) -> LaplacianPE:
    """Eigenvectors of the k_pe smallest non-trivial eigenvalues of L.

    The full dense symmetric eigendecomposition is taken (desk scale);
    eigenvalues below 1e-8 count as trivial and are skipped. Each returned
    column's sign is fixed so its largest-magnitude entry is positive.
    """
    n = L.shape[0]
    eigenvalues, eigenvectors = np.linalg.eigh(L)
    n_components = int(np.sum(eigenvalues < _TRIVIAL_EIGENVALUE))
    if k_pe < 1 or k_pe > n - n_components:
        raise ValidationError(
            f"k_pe={k_pe} out of range: graph has {n} nodes and "
            f"{n_components} connected components (max k_pe = {n - n_components})"
        )
    sel = slice(n_components, n_components + k_pe)
    vectors = eigenvectors[:, sel].copy()
    for j in range(vectors.shape[1]):
        lead = np.argmax(np.abs(vectors[:, j]))
        if vectors[lead, j] < 0.0:
            vectors[:, j] = -vectors[:, j]
    return LaplacianPE(
        vectors=vectors,
        eigenvalues=eigenvalues[sel].copy(),
        n_components=n_components,
    )


def randomize_pe_signs(pe: LaplacianPE, seed: int) -> LaplacianPE:
    """Flip each column by an independent seeded +/-1.

    Eigenvector signs are arbitrary; flipping them during training keeps the
    model from keying on the canonical-sign convention.
    """
    rng = np.random.default_rng(seed)
    signs = rng.integers(0, 2, size=pe.k) * 2 - 1
    return replace(pe, vectors=pe.vectors * signs[None, :].astype(np.float64))
