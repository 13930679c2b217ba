"""Minimal reverse-mode autodiff over float64 numpy arrays.

Only the operations the student model and its losses need are provided.
Every op checks its forward output and its input gradients for non-finite
values and raises ``FloatingPointError`` naming the op.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad=False, parents=(), backward=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(op={self.op}, shape={self.data.shape})"

    def backward(self):
        if self.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {self.data.shape}")
        order, seen = [], set()

        def visit(t):
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if p.requires_grad and id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            grads = node._backward(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if not np.all(np.isfinite(g)):
                    raise FloatingPointError(f"non-finite gradient from op '{node.op}'")
                parent.grad = g if parent.grad is None else parent.grad + g


def _make(data, parents, backward, op):
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by op '{op}'")
    rg = any(p.requires_grad for p in parents)
    return Tensor(data, rg, parents if rg else (), backward if rg else None, op)


def const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b):
    a, b = const(a), const(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = const(a), const(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def scale(a, c: float):
    a = const(a)
    return _make(a.data * c, (a,), lambda g: (g * c,), "scale")


def matmul(a, b):
    a, b = const(a), const(b)
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T if a.requires_grad else None,
                                                     a.data.T @ g if b.requires_grad else None), "matmul")


def transpose(a):
    a = const(a)
    return _make(a.data.T, (a,), lambda g: (g.T,), "transpose")


def relu(a):
    a = const(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def concat(parts, axis=1):
    parts = [const(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([p.data for p in parts], axis=axis), tuple(parts),
                 lambda g: tuple(np.split(g, cuts, axis=axis)), "concat")


def take_rows(a, idx):
    a = const(a)
    idx = np.asarray(idx, dtype=np.int64)

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, idx, g)
        return (out,)

    return _make(a.data[idx], (a,), back, "take_rows")


def mean_aggregate(x, indptr, indices):
    """Row u of the output is the mean of ``x`` over CSR row u."""
    x = const(x)
    xd = np.ascontiguousarray(x.data)
    out = kernels.mean_aggregate(indptr, indices, xd)
    return _make(out, (x,), lambda g: (
        kernels.mean_aggregate_backward(indptr, indices, np.ascontiguousarray(g), x.shape[0]),), "mean_aggregate")


def segment_mean(x, segments, n_segments):
    """Mean of the rows of ``x`` sharing a segment id; empty segments give zeros."""
    x = const(x)
    segments = np.asarray(segments, dtype=np.int64)
    counts = np.bincount(segments, minlength=n_segments).astype(np.float64)
    safe = np.where(counts > 0, counts, 1.0)
    out = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(out, segments, x.data)
    out /= safe[:, None]
    return _make(out, (x,), lambda g: ((g / safe[:, None])[segments],), "segment_mean")


def normalize_rows(a):
    a = const(a)
    norms = np.linalg.norm(a.data, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise FloatingPointError("zero-norm row in 'normalize_rows'")
    y = a.data / norms

    def back(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norms,)

    return _make(y, (a,), back, "normalize_rows")


def cross_entropy_rows(logits, target):
    """Per-row ``logsumexp(row) - row[target]``."""
    logits = const(logits)
    target = np.asarray(target, dtype=np.int64)
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    ez = np.exp(z - zmax)
    ssum = ez.sum(axis=1, keepdims=True)
    lse = (np.log(ssum) + zmax)[:, 0]
    rows = np.arange(z.shape[0])
    out = lse - z[rows, target]

    def back(g):
        soft = ez / ssum
        soft[rows, target] -= 1.0
        return (soft * g[:, None],)

    return _make(out, (logits,), back, "cross_entropy_rows")


def softmax2_bce(logits, labels, eps=1e-12):
    """Mean binary cross-entropy of ``softmax(logits)[:, 1]`` against labels.

    Probabilities are clamped to ``[eps, 1 - eps]``; the clamp has zero
    gradient where it binds.
    """
    logits = const(logits)
    y = np.asarray(labels, dtype=np.float64)
    n = y.shape[0]
    if n == 0:
        raise ValueError("binary cross-entropy over an empty edge set")
    d = logits.data[:, 1] - logits.data[:, 0]
    p = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    pc = np.clip(p, eps, 1.0 - eps)
    loss = -np.mean(y * np.log(pc) + (1.0 - y) * np.log(1.0 - pc))

    def back(g):
        free = (p > eps) & (p < 1.0 - eps)
        dldp = (-(y / pc) + (1.0 - y) / (1.0 - pc)) / n * free
        dd = dldp * p * (1.0 - p)
        out = np.stack([-dd, dd], axis=1) * g
        return (out,)

    return _make(np.array(loss), (logits,), back, "softmax2_bce")


def total(a):
    a = const(a)
    return _make(np.array(a.data.sum()), (a,), lambda g: (np.full_like(a.data, g),), "sum")


def mean(a):
    a = const(a)
    n = a.data.size
    return _make(np.array(a.data.mean()), (a,), lambda g: (np.full_like(a.data, g / n),), "mean")


def add_scalars(terms):
    """Sum of scalar tensors (possibly empty)."""
    terms = [t for t in terms if t is not None]
    if not terms:
        return Tensor(np.array(0.0))
    out = terms[0]
    for t in terms[1:]:
        out = add(out, t)
    return out
