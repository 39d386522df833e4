"""Shared finite-difference gradient check for the graph transformer."""

import numpy as np

from floodgt import gt_model as gt
from floodgt.graph_construction import build_knn_graph
from floodgt.positional_encoding import compute_pe, normalized_laplacian


def toy_problem(n=5, n_features=3, k=2, k_pe=2, seed=0):
    """Small connected graph with features, encodings, and mixed labels."""
    rng = np.random.default_rng(seed)
    Z = rng.normal(size=(n, n_features))
    graph = build_knn_graph(Z, k=k)
    pe = compute_pe(normalized_laplacian(graph), k_pe=k_pe)
    features = rng.uniform(size=(n, n_features))
    labels = rng.integers(0, 2, size=n)
    labels[0], labels[1] = 0, 1
    mask = np.arange(n)
    return graph, features, pe, labels, mask


def max_relative_error(graph, features, pe, params, labels, mask,
                       seed=0, step=1e-5, mode="train"):
    """Max over parameters of |analytic - central difference| / scale.

    The scale is max(|analytic|, |numeric|, 1e-5) elementwise, so large
    gradients are compared relatively and near-zero ones absolutely at the
    finite-difference noise floor.
    """
    _, grads = gt.backward(graph, features, pe, params, labels, mask,
                           seed=seed, mode=mode)

    def loss_at():
        probs = gt.forward(graph, features, pe, params, mode=mode, seed=seed)
        return gt.bce_loss(probs, labels, mask)

    worst = 0.0
    for name, arr in params.named_arrays():
        flat = arr.ravel()
        g = grads[name].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            hi = loss_at()
            flat[i] = keep - step
            lo = loss_at()
            flat[i] = keep
            numeric = (hi - lo) / (2.0 * step)
            scale = max(abs(g[i]), abs(numeric), 1e-5)
            worst = max(worst, abs(g[i] - numeric) / scale)
    return worst
