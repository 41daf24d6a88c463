"""Reverse-mode autodiff over numpy arrays.

Every tensor op builds a node in a computation graph; ``backward`` walks the
graph in reverse topological order and accumulates gradients into the leaves.
All reductions go through numpy, whose accumulation order is fixed for a given
build, so identical inputs give bit-identical outputs across runs.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not satisfy an op's contract."""


class NumericError(ArithmeticError):
    """A NaN/Inf showed up where only finite values are allowed."""


class GraphError(RuntimeError):
    """Misuse of the computation graph (non-scalar backward, cycle)."""


_check_finite = True


def set_finite_checks(enabled: bool) -> None:
    """Toggle the NaN/Inf check run on every op output (default on)."""
    global _check_finite
    _check_finite = bool(enabled)


class Tensor:
    """An n-d array plus the bookkeeping needed for reverse-mode autodiff.

    ``_backward`` maps the output gradient to one gradient per parent.
    Leaves (inputs, parameters) have no parents.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents
        self._backward = _backward
        if _check_finite and not np.all(np.isfinite(arr)):
            raise NumericError("non-finite values in tensor of shape %s" % (arr.shape,))

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, requires_grad=%s)" % (
            self.shape, self.data.dtype.name, self.requires_grad)


class Param:
    """A named leaf tensor. Names are hierarchical (dots) and must be unique
    within a model; they key the checkpoint records."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, tensor: Tensor):
        tensor.requires_grad = True
        self.name = name
        self.tensor = tensor

    @property
    def data(self):
        return self.tensor.data

    @property
    def grad(self):
        return self.tensor.grad

    def zero_grad(self):
        self.tensor.grad = np.zeros_like(self.tensor.data)


# ---------------------------------------------------------------------------
# matmul instrumentation

_counter_stacks = threading.local()


def _counters():
    if not hasattr(_counter_stacks, "stack"):
        _counter_stacks.stack = []
    return _counter_stacks.stack


class MatmulCounter:
    """Accumulates multiply-add counts of every forward matmul in scope."""

    def __init__(self):
        self.macs = 0


@contextmanager
def count_matmuls():
    """Context manager yielding a counter of forward matmul multiply-adds."""
    counter = MatmulCounter()
    _counters().append(counter)
    try:
        yield counter
    finally:
        _counters().pop()


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from ``loss``.

    ``loss`` must be scalar-shaped (() or (1,)). Gradients accumulate into
    existing ``grad`` buffers, so zero them between steps.
    """
    if loss.data.shape not in ((), (1,)):
        raise GraphError("backward requires a scalar loss, got shape %s" % (loss.data.shape,))
    order = _toposort(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is None or node.grad is None:
            continue
        parent_grads = node._backward(node.grad)
        for parent, g in zip(node._parents, parent_grads):
            if not parent.requires_grad or g is None:
                continue
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.data)
            parent.grad += g


def _toposort(root: Tensor):
    # Iterative DFS; gray/black marks double as the cycle check.
    GRAY, BLACK = 0, 1
    state = {}
    order = []
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            state[id(node)] = BLACK
            order.append(node)
            continue
        mark = state.get(id(node))
        if mark == BLACK:
            continue
        if mark == GRAY:
            raise GraphError("cycle detected in computation graph")
        state[id(node)] = GRAY
        stack.append((node, True))
        if node.requires_grad:
            for parent in node._parents:
                if state.get(id(parent)) != BLACK:
                    stack.append((parent, False))
    return order


# ---------------------------------------------------------------------------
# elementwise / shape primitives


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError("add: cannot broadcast %s with %s" % (a.shape, b.shape))
    return Tensor(out, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError("sub: cannot broadcast %s with %s" % (a.shape, b.shape))
    return Tensor(out, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError("mul: cannot broadcast %s with %s" % (a.shape, b.shape))
    return Tensor(out, _parents=(a, b),
                  _backward=lambda g: (_unbroadcast(g * b.data, a.shape),
                                       _unbroadcast(g * a.data, b.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return Tensor(a.data * c, _parents=(a,), _backward=lambda g: (g * c,))


def neg(a: Tensor) -> Tensor:
    return scale(a, -1.0)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul expects 2-D operands, got %s and %s" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul: inner dims disagree, %s vs %s" % (a.shape, b.shape))
    m, k = a.shape
    n = b.shape[1]
    for counter in _counters():
        counter.macs += m * k * n
    out = a.data @ b.data
    return Tensor(out, _parents=(a, b),
                  _backward=lambda g: (g @ b.data.T, a.data.T @ g))


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    return Tensor(a.data.T.copy(), _parents=(a,), _backward=lambda g: (g.T,))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape
    return Tensor(a.data.reshape(shape), _parents=(a,),
                  _backward=lambda g: (g.reshape(old),))


def relu(a: Tensor) -> Tensor:
    # subgradient at 0 is 0, by the strict > mask
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0.0), _parents=(a,),
                  _backward=lambda g: (g * mask,))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, _parents=(a,), _backward=lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), _parents=(a,),
                  _backward=lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    """Elementwise square root with subgradient 0 at x == 0."""
    out = np.sqrt(a.data)

    def back(g):
        return (np.where(a.data > 0, g / (2.0 * np.where(a.data > 0, out, 1.0)), 0.0),)

    return Tensor(out, _parents=(a,), _backward=back)


def sum_all(a: Tensor) -> Tensor:
    return Tensor(a.data.sum(), _parents=(a,),
                  _backward=lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return Tensor(a.data.mean(), _parents=(a,),
                  _backward=lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def mean_rows(a: Tensor) -> Tensor:
    """Column-wise mean over rows: [n, d] -> [d]."""
    if a.data.ndim != 2:
        raise ShapeError("mean_rows expects a 2-D tensor")
    n = a.shape[0]
    return Tensor(a.data.mean(axis=0), _parents=(a,),
                  _backward=lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


def sum_axis1(a: Tensor) -> Tensor:
    """Row-wise sum: [n, d] -> [n]."""
    if a.data.ndim != 2:
        raise ShapeError("sum_axis1 expects a 2-D tensor")
    d = a.shape[1]
    return Tensor(a.data.sum(axis=1), _parents=(a,),
                  _backward=lambda g: (np.repeat(g[:, None], d, axis=1),))


def concat_rows(parts) -> Tensor:
    """Stack 2-D tensors vertically: [[n1,d],[n2,d],...] -> [n1+n2+..., d]."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one tensor")
    width = parts[0].shape[1]
    for p in parts:
        if p.data.ndim != 2 or p.shape[1] != width:
            raise ShapeError("concat_rows: width mismatch (%s vs %s)" % (p.shape, (None, width)))
    sizes = [p.shape[0] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=0)

    def back(g):
        grads, off = [], 0
        for n in sizes:
            grads.append(g[off:off + n])
            off += n
        return tuple(grads)

    return Tensor(out, _parents=tuple(parts), _backward=back)


def concat_cols(parts) -> Tensor:
    """Stack 2-D tensors horizontally: [[n,d1],[n,d2],...] -> [n, d1+d2+...]."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols needs at least one tensor")
    rows = parts[0].shape[0]
    for p in parts:
        if p.data.ndim != 2 or p.shape[0] != rows:
            raise ShapeError("concat_cols: row-count mismatch")
    sizes = [p.shape[1] for p in parts]
    out = np.concatenate([p.data for p in parts], axis=1)

    def back(g):
        grads, off = [], 0
        for d in sizes:
            grads.append(g[:, off:off + d])
            off += d
        return tuple(grads)

    return Tensor(out, _parents=tuple(parts), _backward=back)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return Tensor(a.data[start:stop].copy(), _parents=(a,), _backward=back)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("slice_cols expects a 2-D tensor")

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return Tensor(a.data[:, start:stop].copy(), _parents=(a,), _backward=back)


def stack_rows(parts) -> Tensor:
    """Stack 1-D tensors into a matrix: B tensors of [d] -> [B, d]."""
    parts = list(parts)
    if not parts:
        raise ShapeError("stack_rows needs at least one tensor")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("stack_rows expects 1-D tensors")
    out = np.stack([p.data for p in parts], axis=0)
    return Tensor(out, _parents=tuple(parts),
                  _backward=lambda g: tuple(g[i] for i in range(len(parts))))


def pick(a: Tensor, rows, cols) -> Tensor:
    """Gather a[rows[i], cols[i]] into a 1-D tensor."""
    if a.data.ndim != 2:
        raise ShapeError("pick expects a 2-D tensor")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return Tensor(a.data[rows, cols].copy(), _parents=(a,), _backward=back)


# ---------------------------------------------------------------------------
# composite / fused nn ops


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a 2-D tensor, computed with max subtraction."""
    if x.data.ndim != 2:
        raise ShapeError("softmax_rows expects a 2-D tensor, got %s" % (x.shape,))
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def back(g):
        # dx = y * (g - sum(g*y)) per row
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return Tensor(out, _parents=(x,), _backward=back)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization: gamma * (x - mean) / sqrt(var + eps) + beta."""
    if x.data.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D tensor")
    d = x.shape[1]
    if d == 0:
        raise ShapeError("layer_norm: zero feature width")
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm: gamma/beta must have shape (%d,)" % d)
    eps = float(eps)
    if eps <= 0:
        raise ShapeError("layer_norm: eps must be positive")
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = xhat * gamma.data + beta.data

    def back(g):
        dbeta = g.sum(axis=0)
        dgamma = (g * xhat).sum(axis=0)
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
        return (dx, dgamma, dbeta)

    return Tensor(out, _parents=(x, gamma, beta), _backward=back)


def linear(x: Tensor, w: Tensor, bias: Tensor = None) -> Tensor:
    """x @ w, plus a row-broadcast bias when given."""
    out = matmul(x, w)
    if bias is not None:
        if bias.data.ndim != 1 or bias.shape[0] != w.shape[1]:
            raise ShapeError("linear: bias shape %s does not match output width %d"
                             % (bias.shape, w.shape[1]))
        out = add(out, bias)
    return out


def ffn(x: Tensor, w1: Tensor, b1: Tensor, w2: Tensor, b2: Tensor) -> Tensor:
    """Two affine maps with an elementwise ReLU between them."""
    return linear(relu(linear(x, w1, b1)), w2, b2)
