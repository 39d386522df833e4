"""Edge-weighted graph-transformer node classifier.

Attention is restricted to graph edges: for node i the softmax runs over its
in-neighborhood (edges j -> i, self-loop included), the resulting attention
row is scaled elementwise by the edge weights with the self-loop term bumped
by one, and the weighted values are aggregated per head. Heads are
concatenated, output-projected, and followed by residual + layer norm and a
feedforward block with the same wrapping. Training is full-graph
binary-cross-entropy descent with per-parameter moment scaling and early
stopping; MC-dropout inference repeats stochastic forward passes.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericalError, TrainingDivergence, ValidationError
from .graph_construction import Graph
from .positional_encoding import LaplacianPE, randomize_pe_signs
from .sampling import DataSplit

PROB_EPS = 1e-7
_LAYER_NORM_EPS = 1e-5
_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


@dataclass(frozen=True)
class GTConfig:
    num_eigenvectors: int = 4
    k_neighbours: int = 8
    num_heads: int = 4
    hidden_dim: int = 32
    num_layers: int = 2
    dropout: float = 0.1
    learning_rate: float = 0.01
    ff_multiplier: int = 2
    max_epochs: int = 300
    patience: int = 30
    seed: int = 0
    pe_sign_flip: bool = False  # re-randomize PE signs every training epoch

    def __post_init__(self):
        if self.hidden_dim % self.num_heads != 0:
            raise ValidationError(
                f"hidden_dim {self.hidden_dim} not divisible by num_heads {self.num_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")
        if self.learning_rate < 0.0:
            raise ValidationError("learning_rate must be >= 0")
        if self.patience < 0:
            raise ValidationError("patience must be >= 0")
        for name in ("num_eigenvectors", "k_neighbours", "num_heads", "hidden_dim",
                     "num_layers", "ff_multiplier", "max_epochs"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    def to_json(self) -> dict:
        return {
            "num_eigenvectors": self.num_eigenvectors,
            "k_neighbours": self.k_neighbours,
            "num_heads": self.num_heads,
            "hidden_dim": self.hidden_dim,
            "num_layers": self.num_layers,
            "dropout": self.dropout,
            "learning_rate": self.learning_rate,
            "ff_multiplier": self.ff_multiplier,
            "max_epochs": self.max_epochs,
            "patience": self.patience,
            "seed": self.seed,
            "pe_sign_flip": self.pe_sign_flip,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "GTConfig":
        return cls(**obj)


@dataclass
class HeadParams:
    w_q: np.ndarray  # (H, d_k)
    w_k: np.ndarray
    w_v: np.ndarray


@dataclass
class LayerParams:
    heads: list[HeadParams]
    w_o: np.ndarray   # (H, H)
    b_o: np.ndarray   # (H,)
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    w_f1: np.ndarray  # (H, H * ff_multiplier)
    b_f1: np.ndarray
    w_f2: np.ndarray  # (H * ff_multiplier, H)
    b_f2: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray


@dataclass
class GTParams:
    config: GTConfig
    n_inputs: int          # F + k_pe
    w_in: np.ndarray       # (n_inputs, H)
    b_in: np.ndarray       # (H,)
    layers: list[LayerParams]
    w_cls: np.ndarray      # (H, 1)
    b_cls: np.ndarray      # (1,)

    def named_arrays(self):
        """Deterministically ordered (name, array) pairs over all parameters."""
        yield "w_in", self.w_in
        yield "b_in", self.b_in
        for li, layer in enumerate(self.layers):
            for hi, head in enumerate(layer.heads):
                yield f"layers.{li}.heads.{hi}.w_q", head.w_q
                yield f"layers.{li}.heads.{hi}.w_k", head.w_k
                yield f"layers.{li}.heads.{hi}.w_v", head.w_v
            for name in ("w_o", "b_o", "ln1_g", "ln1_b", "w_f1", "b_f1",
                         "w_f2", "b_f2", "ln2_g", "ln2_b"):
                yield f"layers.{li}.{name}", getattr(layer, name)
        yield "w_cls", self.w_cls
        yield "b_cls", self.b_cls

    def copy(self) -> "GTParams":
        return copy.deepcopy(self)

    def to_json(self) -> dict:
        return {
            "format": "floodgt-checkpoint-v1",
            "config": self.config.to_json(),
            "n_inputs": self.n_inputs,
            "arrays": {
                name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
                for name, arr in self.named_arrays()
            },
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @classmethod
    def from_json(cls, obj: dict) -> "GTParams":
        if obj.get("format") != "floodgt-checkpoint-v1":
            raise ValidationError(f"unknown checkpoint format {obj.get('format')!r}")
        config = GTConfig.from_json(obj["config"])
        params = init_params(config, obj["n_inputs"] - config.num_eigenvectors)
        arrays = dict(params.named_arrays())
        for name, payload in obj["arrays"].items():
            arr = arrays[name]
            arr[...] = np.array(payload["data"], dtype=np.float64).reshape(payload["shape"])
        return params


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)  # train_loss, val_loss, val_auc
    best_epoch: int = 0
    wall_seconds: float = 0.0

    def append(self, train_loss, val_loss, val_auc):
        self.epochs.append(
            {"train_loss": float(train_loss), "val_loss": float(val_loss),
             "val_auc": float(val_auc)}
        )

    def write_csv(self, path, comment=None):
        # wall_seconds is intentionally not serialized: artifacts must be
        # byte-identical across reruns with the same seeds
        with open(path, "w", newline="", encoding="utf-8") as fh:
            if comment:
                fh.write(f"# {comment}\n")
            writer = csv.writer(fh)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_auc", "best"])
            for e, row in enumerate(self.epochs):
                writer.writerow(
                    [e, repr(row["train_loss"]), repr(row["val_loss"]),
                     repr(row["val_auc"]), int(e == self.best_epoch)]
                )


# -------------------------------------------------------------------------- #
# initialization
# -------------------------------------------------------------------------- #


def init_params(config: GTConfig, n_features: int) -> GTParams:
    """Seeded Glorot-uniform weights; zero biases; unit layer-norm gains."""
    H, d_k = config.hidden_dim, config.head_dim
    ff = config.hidden_dim * config.ff_multiplier
    n_inputs = n_features + config.num_eigenvectors
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x1717]))

    def glorot(fan_in, fan_out):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    layers = []
    for _ in range(config.num_layers):
        heads = [
            HeadParams(w_q=glorot(H, d_k), w_k=glorot(H, d_k), w_v=glorot(H, d_k))
            for _ in range(config.num_heads)
        ]
        layers.append(
            LayerParams(
                heads=heads,
                w_o=glorot(H, H), b_o=np.zeros(H),
                ln1_g=np.ones(H), ln1_b=np.zeros(H),
                w_f1=glorot(H, ff), b_f1=np.zeros(ff),
                w_f2=glorot(ff, H), b_f2=np.zeros(H),
                ln2_g=np.ones(H), ln2_b=np.zeros(H),
            )
        )
    return GTParams(
        config=config,
        n_inputs=n_inputs,
        w_in=glorot(n_inputs, H),
        b_in=np.zeros(H),
        layers=layers,
        w_cls=glorot(H, 1),
        b_cls=np.zeros(1),
    )


# -------------------------------------------------------------------------- #
# forward pass
# -------------------------------------------------------------------------- #


def _layer_norm(x, gamma, beta):
    mu = x.mean(axis=1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    return centered * (var + _LAYER_NORM_EPS) ** -0.5 * gamma + beta


def _check_finite(array: np.ndarray, where: str):
    if not np.all(np.isfinite(array)):
        raise NumericalError(f"non-finite values detected in {where}")


def _forward_graph(graph: Graph, inputs: np.ndarray, params: GTParams,
                   mode: str, seed: int, collect: bool = False):
    """Build the tensor graph; returns (prob tensor, leaf dict, internals)."""
    if mode not in ("train", "eval", "mc_dropout"):
        raise ValidationError(f"unknown forward mode {mode!r}")
    config = params.config
    n = graph.n
    if inputs.shape != (n, params.n_inputs):
        raise ValidationError(
            f"input matrix {inputs.shape} does not match (n={n}, {params.n_inputs})"
        )
    _check_finite(inputs, "model inputs")
    src, dst, edge_w = graph.src, graph.dst, graph.weight
    if np.bincount(src[src == dst], minlength=n).min() < 1:
        raise ValidationError("every node needs a self-loop")
    self_term = (src == dst).astype(np.float64)  # identity bump of Eq.-style scaling
    dropout = config.dropout if mode in ("train", "mc_dropout") else 0.0
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xD120]))
    scale = 1.0 / math.sqrt(config.head_dim)

    leaves: dict[str, ad.Tensor] = {}

    def leaf_of(name, arr):
        t = ad.leaf(arr)
        leaves[name] = t
        return t

    def dropped(t):
        if dropout == 0.0:
            return t
        mask = (rng.random(t.shape) >= dropout) / (1.0 - dropout)
        return t * mask

    h = ad.wrap(inputs) @ leaf_of("w_in", params.w_in) + leaf_of("b_in", params.b_in)
    _check_finite(h.data, "input projection")
    internals = []
    for li, layer in enumerate(params.layers):
        head_outs = []
        head_records = []
        for hi, head in enumerate(layer.heads):
            prefix = f"layers.{li}.heads.{hi}"
            q = h @ leaf_of(f"{prefix}.w_q", head.w_q)
            k = h @ leaf_of(f"{prefix}.w_k", head.w_k)
            v = h @ leaf_of(f"{prefix}.w_v", head.w_v)
            logits = (ad.gather(q, dst) * ad.gather(k, src)).sum(axis=1) * scale
            attention = ad.segment_softmax(logits, dst, n)
            scaled = (attention + self_term) * edge_w
            out = ad.segment_sum(ad.gather(v, src) * scaled.reshape(-1, 1), dst, n)
            head_outs.append(out)
            if collect:
                head_records.append(
                    {"attention": attention.data.copy(), "scaled": scaled.data.copy(),
                     "head_out": out.data.copy(), "values": v.data.copy()}
                )
        z = ad.concat_cols(head_outs) @ leaf_of(f"layers.{li}.w_o", layer.w_o) \
            + leaf_of(f"layers.{li}.b_o", layer.b_o)
        z = dropped(z)
        h = _layer_norm(h + z, leaf_of(f"layers.{li}.ln1_g", layer.ln1_g),
                        leaf_of(f"layers.{li}.ln1_b", layer.ln1_b))
        f = ad.relu(h @ leaf_of(f"layers.{li}.w_f1", layer.w_f1)
                    + leaf_of(f"layers.{li}.b_f1", layer.b_f1))
        f = dropped(f)
        f = f @ leaf_of(f"layers.{li}.w_f2", layer.w_f2) \
            + leaf_of(f"layers.{li}.b_f2", layer.b_f2)
        h = _layer_norm(h + f, leaf_of(f"layers.{li}.ln2_g", layer.ln2_g),
                        leaf_of(f"layers.{li}.ln2_b", layer.ln2_b))
        _check_finite(h.data, f"layer {li}")
        if collect:
            internals.append(head_records)
    logits = (h @ leaf_of("w_cls", params.w_cls)).reshape(-1) + leaf_of("b_cls", params.b_cls)
    probs = ad.sigmoid(logits)
    _check_finite(probs.data, "classifier head")
    return probs, leaves, internals


def model_inputs(features: np.ndarray, pe: LaplacianPE) -> np.ndarray:
    """Raw factor columns concatenated with the positional-encoding columns."""
    return np.hstack([np.asarray(features, dtype=np.float64), pe.vectors])


def forward(graph: Graph, features: np.ndarray, pe: LaplacianPE, params: GTParams,
            mode: str = "eval", seed: int = 0, return_internals: bool = False):
    """Per-node flood probabilities; deterministic for a fixed (mode, seed)."""
    probs, _, internals = _forward_graph(
        graph, model_inputs(features, pe), params, mode, seed, collect=return_internals
    )
    if return_internals:
        return probs.data.copy(), internals
    return probs.data.copy()


# -------------------------------------------------------------------------- #
# loss and gradients
# -------------------------------------------------------------------------- #


def _bce_tensor(probs: ad.Tensor, labels: np.ndarray, mask: np.ndarray) -> ad.Tensor:
    if mask.size == 0:
        raise ValidationError("empty mask in BCE loss")
    p = ad.clip(ad.gather(probs, mask), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)[mask]
    return -(y * ad.log(p) + (1.0 - y) * ad.log(1.0 - p)).mean()


def bce_loss(probs: np.ndarray, labels: np.ndarray, mask: np.ndarray) -> float:
    """Mean masked binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    mask = np.asarray(mask, dtype=np.int64)
    if mask.size == 0:
        raise ValidationError("empty mask in BCE loss")
    p = np.clip(np.asarray(probs, dtype=np.float64)[mask], PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(labels, dtype=np.float64)[mask]
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log(1.0 - p))))


def backward(graph: Graph, features: np.ndarray, pe: LaplacianPE, params: GTParams,
             labels: np.ndarray, mask: np.ndarray, seed: int = 0,
             mode: str = "train") -> tuple[float, dict[str, np.ndarray]]:
    """Loss and exact gradients for every parameter via reverse-mode sweep.

    The dropout masks are a pure function of `seed`, so repeated calls (as in
    finite-difference checks) see the identical stochastic network.
    """
    probs, leaves, _ = _forward_graph(
        graph, model_inputs(features, pe), params, mode, seed
    )
    loss = _bce_tensor(probs, labels, np.asarray(mask, dtype=np.int64))
    loss.backward()
    grads = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad)
        for name, t in leaves.items()
    }
    return float(loss.data), grads


# -------------------------------------------------------------------------- #
# training
# -------------------------------------------------------------------------- #


def _ids_to_rows(ids: np.ndarray, node_ids: np.ndarray) -> np.ndarray:
    lookup = {int(v): i for i, v in enumerate(node_ids)}
    try:
        return np.array([lookup[int(i)] for i in ids], dtype=np.int64)
    except KeyError as exc:
        raise ValidationError(f"split id {exc.args[0]} not among graph nodes") from exc


def train(graph: Graph, features: np.ndarray, pe: LaplacianPE, labels: np.ndarray,
          split: DataSplit, config: GTConfig, node_ids: np.ndarray | None = None,
          init: GTParams | None = None) -> tuple[GTParams, TrainHistory]:
    """Full-graph training with moment-scaled steps and early stopping.

    First/second gradient-moment estimates (decay 0.9 / 0.999, epsilon 1e-8)
    scale each parameter's step. Validation loss is tracked every epoch in
    eval mode; training stops after `patience` epochs without improvement and
    the best-validation parameters are returned. Fully deterministic for a
    fixed config seed.
    """
    from .metrics import auc_roc  # local import to avoid a cycle at module load

    if node_ids is None:
        node_ids = np.arange(graph.n, dtype=np.int64)
    train_mask = _ids_to_rows(split.train, node_ids)
    val_mask = _ids_to_rows(split.val, node_ids)
    labels = np.asarray(labels)

    params = init.copy() if init is not None else init_params(config, features.shape[1])
    moment1 = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    moment2 = {name: np.zeros_like(arr) for name, arr in params.named_arrays()}
    epoch_seeds = np.random.SeedSequence([config.seed, 0x7A41]).generate_state(
        max(config.max_epochs, 1)
    )
    sign_seeds = np.random.SeedSequence([config.seed, 0x51F1]).generate_state(
        max(config.max_epochs, 1)
    )

    history = TrainHistory()
    best_val = np.inf
    best_params = params.copy()
    wait = 0
    step = 0
    started = time.perf_counter()
    for epoch in range(config.max_epochs):
        pe_epoch = (
            randomize_pe_signs(pe, int(sign_seeds[epoch])) if config.pe_sign_flip else pe
        )
        try:
            train_loss, grads = backward(
                graph, features, pe_epoch, params, labels, train_mask,
                seed=int(epoch_seeds[epoch]),
            )
        except NumericalError as exc:
            raise TrainingDivergence(f"training diverged at epoch {epoch}: {exc}") from exc
        if math.isnan(train_loss):
            raise TrainingDivergence(f"training loss is NaN at epoch {epoch}")

        step += 1
        lr = config.learning_rate
        for name, arr in params.named_arrays():
            g = grads[name]
            moment1[name] = _ADAM_BETA1 * moment1[name] + (1 - _ADAM_BETA1) * g
            moment2[name] = _ADAM_BETA2 * moment2[name] + (1 - _ADAM_BETA2) * g * g
            m_hat = moment1[name] / (1 - _ADAM_BETA1**step)
            v_hat = moment2[name] / (1 - _ADAM_BETA2**step)
            arr -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)

        probs_eval = forward(graph, features, pe, params, mode="eval")
        val_loss = bce_loss(probs_eval, labels, val_mask)
        val_auc = auc_roc(probs_eval[val_mask], labels[val_mask])
        history.append(train_loss, val_loss, val_auc)
        if val_loss < best_val:
            best_val = val_loss
            best_params = params.copy()
            history.best_epoch = epoch
            wait = 0
        else:
            wait += 1
            if wait > config.patience:
                break
    history.wall_seconds = time.perf_counter() - started
    return best_params, history


# -------------------------------------------------------------------------- #
# MC-dropout inference
# -------------------------------------------------------------------------- #


def mc_dropout_predict(graph: Graph, features: np.ndarray, pe: LaplacianPE,
                       params: GTParams, passes: int = 100,
                       seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Mean and population std of probabilities over stochastic forward passes."""
    if passes < 1:
        raise ValidationError("passes must be >= 1")
    pass_seeds = np.random.SeedSequence([seed, 0x3C9E]).generate_state(passes)
    stack = np.empty((passes, graph.n))
    for p in range(passes):
        stack[p] = forward(graph, features, pe, params, mode="mc_dropout",
                           seed=int(pass_seeds[p]))
    # identical passes (dropout = 0, passes = 1) must give exactly zero std
    # and the common value as mean, which pairwise summation cannot promise
    spread = stack.max(axis=0) - stack.min(axis=0)
    mean = np.where(spread == 0.0, stack[0], stack.mean(axis=0))
    std = np.where(spread == 0.0, 0.0, stack.std(axis=0))
    return mean, std
