"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Just enough of an engine for the graph-transformer forward pass: broadcast
arithmetic, matmul, a few activations, reductions, and the two sparse-graph
primitives (row gather and segment sum). Gradients are accumulated on leaf
tensors by a topological backward sweep; everything stays in 64-bit floats so
analytic gradients can be checked against central finite differences.
"""

from __future__ import annotations

import numpy as np


def _as_array(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return x.astype(np.float64, copy=False)
    return np.asarray(x, dtype=np.float64)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # collapse leading axes added by broadcasting
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A node in the computation graph holding a float64 array."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # make ndarray <op> Tensor defer to the Tensor reflected operators
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = _as_array(data)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self._parents = parents if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    @property
    def shape(self):
        return self.data.shape

    # ------------------------------------------------------------------ #
    # arithmetic
    # ------------------------------------------------------------------ #

    def __add__(self, other):
        other = wrap(other)
        out = Tensor(self.data + other.data, parents=(self, other))

        def backward(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        out._backward = backward
        return out

    __radd__ = __add__

    def __neg__(self):
        out = Tensor(-self.data, parents=(self,))
        out._backward = lambda g: (-g,)
        return out

    def __sub__(self, other):
        return self + (-wrap(other))

    def __rsub__(self, other):
        return wrap(other) + (-self)

    def __mul__(self, other):
        other = wrap(other)
        out = Tensor(self.data * other.data, parents=(self, other))

        def backward(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        out._backward = backward
        return out

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = wrap(other)
        out = Tensor(self.data / other.data, parents=(self, other))

        def backward(g):
            return (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / other.data**2, other.shape),
            )

        out._backward = backward
        return out

    def __rtruediv__(self, other):
        return wrap(other) / self

    def __pow__(self, exponent: float):
        out = Tensor(self.data**exponent, parents=(self,))
        out._backward = lambda g: (g * exponent * self.data ** (exponent - 1),)
        return out

    def __matmul__(self, other):
        other = wrap(other)
        out = Tensor(self.data @ other.data, parents=(self, other))

        def backward(g):
            return (g @ other.data.T, self.data.T @ g)

        out._backward = backward
        return out

    # ------------------------------------------------------------------ #
    # shape and reductions
    # ------------------------------------------------------------------ #

    def reshape(self, *shape):
        out = Tensor(self.data.reshape(*shape), parents=(self,))
        out._backward = lambda g: (g.reshape(self.shape),)
        return out

    def sum(self, axis=None, keepdims=False):
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), parents=(self,))

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, self.shape).copy(),)

        out._backward = backward
        return out

    def mean(self, axis=None, keepdims=False):
        count = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    # ------------------------------------------------------------------ #
    # backward sweep
    # ------------------------------------------------------------------ #

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() expects a scalar loss")
        order = []
        seen = set()

        def visit(node):
            if id(node) in seen or not node.requires_grad:
                return
            seen.add(id(node))
            for parent in node._parents:
                visit(parent)
            order.append(node)

        visit(self)
        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def leaf(data) -> Tensor:
    """A parameter tensor whose gradient is accumulated by backward()."""
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------- #
# elementwise functions
# ---------------------------------------------------------------------- #


def exp(t: Tensor) -> Tensor:
    out = Tensor(np.exp(t.data), parents=(t,))
    out._backward = lambda g: (g * out.data,)
    return out


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.data), parents=(t,))
    out._backward = lambda g: (g / t.data,)
    return out


def relu(t: Tensor) -> Tensor:
    out = Tensor(np.maximum(t.data, 0.0), parents=(t,))
    out._backward = lambda g: (g * (t.data > 0.0),)
    return out


def sigmoid(t: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-t.data))
    out = Tensor(s, parents=(t,))
    out._backward = lambda g: (g * s * (1.0 - s),)
    return out


def clip(t: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp values; gradient is zero where the clamp is active."""
    out = Tensor(np.clip(t.data, lo, hi), parents=(t,))
    inside = (t.data > lo) & (t.data < hi)
    out._backward = lambda g: (g * inside,)
    return out


# ---------------------------------------------------------------------- #
# graph primitives
# ---------------------------------------------------------------------- #


def gather(t: Tensor, index: np.ndarray) -> Tensor:
    """Select rows (or scalars for 1-D input) by integer index."""
    out = Tensor(t.data[index], parents=(t,))

    def backward(g):
        acc = np.zeros_like(t.data)
        np.add.at(acc, index, g)
        return (acc,)

    out._backward = backward
    return out


def segment_sum(t: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Sum rows of `t` into `num_segments` buckets given by `segment_ids`."""
    shape = (num_segments,) + t.data.shape[1:]
    acc = np.zeros(shape, dtype=np.float64)
    np.add.at(acc, segment_ids, t.data)
    out = Tensor(acc, parents=(t,))
    out._backward = lambda g: (g[segment_ids],)
    return out


def segment_softmax(logits: Tensor, segment_ids: np.ndarray, num_segments: int) -> Tensor:
    """Softmax of a 1-D logit vector within each segment.

    The per-segment max is subtracted as a detached constant, which leaves
    both the value and the gradient of the softmax unchanged.
    """
    shift = np.full(num_segments, -np.inf)
    np.maximum.at(shift, segment_ids, logits.data)
    e = exp(logits - shift[segment_ids])
    denom = segment_sum(e, segment_ids, num_segments)
    return e / gather(denom, segment_ids)


def concat_cols(tensors: list[Tensor]) -> Tensor:
    """Concatenate 2-D tensors along the column axis."""
    out = Tensor(np.concatenate([t.data for t in tensors], axis=1), parents=tuple(tensors))
    widths = [t.data.shape[1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, offsets[i] : offsets[i + 1]] for i in range(len(tensors)))

    out._backward = backward
    return out
