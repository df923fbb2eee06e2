"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Value` wraps a numpy array together with its adjoint.  Every
operation records its parents and a closure that pushes the output adjoint
back to them; :func:`backward` walks the graph once in reverse topological
order.  The graph is rebuilt on every forward pass.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes do not conform for an operation."""


def _as_array(data) -> np.ndarray:
    return np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
        else data.astype(np.float64, copy=False)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (the inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast_shape(op: str, a: tuple, b: tuple) -> tuple:
    try:
        return np.broadcast_shapes(a, b)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a} and {b} do not broadcast") from None


class Value:
    """A node in the computation graph.

    ``requires_grad`` marks leaves whose adjoint the caller wants; interior
    nodes inherit it from their parents.  Nodes that need no gradient skip
    their backward closure entirely.
    """

    __slots__ = ("data", "grad", "op", "parents", "requires_grad", "_backward")
    __array_priority__ = 100.0

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf", parents: tuple = ()):
        self.data = _as_array(data)
        self.grad = np.zeros_like(self.data)
        self.op = op
        self.parents = parents
        self.requires_grad = requires_grad
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Value(op={self.op!r}, shape={self.data.shape})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_value(x) -> Value:
    return x if isinstance(x, Value) else Value(x)


def _node(data, op: str, parents: tuple, backward) -> Value:
    out = Value.__new__(Value)
    out.data = data
    out.grad = np.zeros_like(data)
    out.op = op
    out.parents = parents
    out.requires_grad = any(p.requires_grad for p in parents)
    out._backward = backward if out.requires_grad else None
    return out


def add(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("add", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), backward)


def sub(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("sub", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g, a.shape)
        if b.requires_grad:
            b.grad -= _unbroadcast(g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), backward)


def mul(a, b) -> Value:
    a, b = as_value(a), as_value(b)
    _broadcast_shape("mul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.grad += _unbroadcast(g * b.data, a.shape)
        if b.requires_grad:
            b.grad += _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, "mul", (a, b), backward)


def matmul(a, b) -> Value:
    """``a @ b`` for a 2-D ``b``; leading axes of ``a`` are treated as batch axes."""
    a, b = as_value(a), as_value(b)
    if b.ndim != 2 or a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    lead = a.shape[:-1]
    a2 = a.data.reshape(-1, b.shape[0])

    def backward(g):
        g2 = g.reshape(-1, b.shape[1])
        if a.requires_grad:
            a.grad += (g2 @ b.data.T).reshape(a.shape)
        if b.requires_grad:
            b.grad += a2.T @ g2

    return _node((a2 @ b.data).reshape(lead + (b.shape[1],)), "matmul", (a, b), backward)


def relu(a) -> Value:
    a = as_value(a)
    mask = a.data > 0

    def backward(g):
        a.grad += g * mask

    return _node(np.where(mask, a.data, 0.0), "relu", (a,), backward)


def tanh(a) -> Value:
    a = as_value(a)
    t = np.tanh(a.data)

    def backward(g):
        a.grad += g * (1.0 - t * t)

    return _node(t, "tanh", (a,), backward)


def identity(a) -> Value:
    return as_value(a)


def square(a) -> Value:
    a = as_value(a)

    def backward(g):
        a.grad += 2.0 * a.data * g

    return _node(a.data * a.data, "square", (a,), backward)


def exp(a) -> Value:
    a = as_value(a)
    e = np.exp(a.data)

    def backward(g):
        a.grad += g * e

    return _node(e, "exp", (a,), backward)


def log(a) -> Value:
    a = as_value(a)
    if np.any(a.data <= 0):
        raise ValueError("log: argument must be strictly positive")

    def backward(g):
        a.grad += g / a.data

    return _node(np.log(a.data), "log", (a,), backward)


def sum(a, axis=None) -> Value:  # noqa: A001 - mirrors numpy naming
    a = as_value(a)
    out = np.sum(a.data, axis=axis)

    def backward(g):
        if axis is None:
            a.grad += np.broadcast_to(g, a.shape)
        else:
            a.grad += np.broadcast_to(np.expand_dims(g, axis), a.shape)

    return _node(np.asarray(out, dtype=np.float64), "sum", (a,), backward)


def mean(a, axis=None) -> Value:
    a = as_value(a)
    count = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis), 1.0 / float(count))


def reshape(a, shape) -> Value:
    a = as_value(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {shape}") from None

    def backward(g):
        a.grad += g.reshape(a.shape)

    return _node(out, "reshape", (a,), backward)


def take(a, index) -> Value:
    a = as_value(a)
    out = np.array(a.data[index], dtype=np.float64)

    def backward(g):
        np.add.at(a.grad, index, g)

    return _node(out, "index", (a,), backward)


def softmax_cross_entropy(logits, labels) -> Value:
    """Per-row cross-entropy of ``softmax(logits)`` against integer ``labels``.

    Fused for stability: log-sum-exp is shifted by the row maximum.
    """
    logits = as_value(logits)
    labels = np.asarray(labels)
    if logits.ndim == 1:
        z = logits.data[None, :]
        labels = labels.reshape(1)
    else:
        z = logits.data
    if labels.shape != z.shape[:-1]:
        raise ShapeError(f"softmax_cross_entropy: logits {logits.shape} vs labels {labels.shape}")
    labels = labels.astype(np.intp)
    shifted = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1))
    picked = np.take_along_axis(shifted, labels[..., None], axis=-1)[..., 0]
    loss = lse - picked
    probs = np.exp(shifted - lse[..., None])

    def backward(g):
        d = probs.copy()
        np.put_along_axis(d, labels[..., None], np.take_along_axis(d, labels[..., None], -1) - 1.0, -1)
        d *= np.asarray(g)[..., None]
        logits.grad += d.reshape(logits.shape)

    out = loss if logits.ndim > 1 else loss.reshape(())
    return _node(out, "softmax_xent", (logits,), backward)


ACTIVATIONS = {"relu": relu, "tanh": tanh, "identity": identity}


def _topological_order(root: Value) -> list[Value]:
    order: list[Value] = []
    seen: set[int] = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))
    return order


def backward(root: Value) -> None:
    """Accumulate d(root)/d(node) into ``.grad`` of every reachable node."""
    if root.data.size != 1 or root.data.ndim != 0:
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return
    order = _topological_order(root)
    root.grad = root.grad + 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def grad(fn, *args):
    """Gradient of scalar ``fn(*values)`` w.r.t. each array argument."""
    leaves = [Value(a, requires_grad=True) for a in args]
    out = fn(*leaves)
    backward(out)
    return [leaf.grad for leaf in leaves]
