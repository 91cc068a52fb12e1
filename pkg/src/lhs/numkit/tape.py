"""A small reverse-mode gradient tape over dense numpy arrays.

Every op records its forward closure and a vector-Jacobian product, so a tape
can be replayed with substituted parameter values (used by the
finite-difference checks) as well as differentiated.

    tape = Tape()
    w = tape.param("w", np.ones((3, 2)))
    loss = ops.sum(ops.mul(w, w))
    grads = tape.backward(loss)      # {"w": 2 * w}
"""
from __future__ import annotations

import numpy as np


class Node:
    __slots__ = ("tape", "index", "op", "parents", "value", "fwd", "vjp", "name")

    def __init__(self, tape, index, op, parents, value, fwd, vjp, name=None):
        self.tape = tape
        self.index = index
        self.op = op
        self.parents = parents
        self.value = value
        self.fwd = fwd
        self.vjp = vjp
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Node({self.op}, shape={self.value.shape})"


class Tape:
    """Ordered record of primitive ops plus a registry of named parameters."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: dict[str, Node] = {}

    def _leaf(self, value, op, name=None) -> Node:
        node = Node(self, len(self.nodes), op, (), np.asarray(value, dtype=np.float64), None, None, name)
        self.nodes.append(node)
        return node

    def param(self, name: str, value) -> Node:
        if name in self.params:
            raise ValueError(f"parameter {name!r} registered twice")
        node = self._leaf(np.array(value, dtype=np.float64), "param", name)
        self.params[name] = node
        return node

    def const(self, value) -> Node:
        return self._leaf(value, "const")

    def record(self, op, parents, fwd, vjp) -> Node:
        value = fwd(*[p.value for p in parents])
        node = Node(self, len(self.nodes), op, tuple(parents), value, fwd, vjp)
        self.nodes.append(node)
        return node

    def replay(self, overrides: dict | None = None) -> list[np.ndarray]:
        """Recompute every node, optionally with new parameter values."""
        overrides = overrides or {}
        vals: list[np.ndarray] = []
        for node in self.nodes:
            if node.fwd is None:
                v = overrides.get(node.name, node.value) if node.op == "param" else node.value
                vals.append(np.asarray(v, dtype=np.float64))
            else:
                vals.append(node.fwd(*[vals[p.index] for p in node.parents]))
        return vals

    def evaluate(self, out: Node, overrides: dict | None = None) -> np.ndarray:
        return self.replay(overrides)[out.index]

    def backward(self, loss: Node) -> dict[str, np.ndarray]:
        if loss.tape is not self:
            raise ValueError("loss was not recorded on this tape")
        if loss.value.size != 1 or loss.value.ndim > 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None)
            if g is None or node.vjp is None:
                if node.op == "param" and g is not None:
                    grads[node.index] = g
                continue
            pvals = [p.value for p in node.parents]
            for parent, pg in zip(node.parents, node.vjp(g, pvals, node.value)):
                if pg is None or parent.op == "const":
                    continue
                if parent.index in grads:
                    grads[parent.index] = grads[parent.index] + pg
                else:
                    grads[parent.index] = pg
        out = {}
        for name, node in self.params.items():
            g = grads.get(node.index)
            out[name] = np.zeros_like(node.value) if g is None else np.asarray(g).reshape(node.value.shape)
        return out


def backward(tape: Tape, loss: Node) -> dict[str, np.ndarray]:
    return tape.backward(loss)


# -- ops ------------------------------------------------------------------

def _tape_of(args) -> Tape:
    for a in args:
        if isinstance(a, Node):
            return a.tape
    raise ValueError("op needs at least one Node argument")


def _lift(tape: Tape, a) -> Node:
    if isinstance(a, Node):
        if a.tape is not tape:
            raise ValueError("mixing nodes from different tapes")
        return a
    return tape.const(a)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _apply(op, args, fwd, vjp) -> Node:
    tape = _tape_of(args)
    parents = [_lift(tape, a) for a in args]
    return tape.record(op, parents, fwd, vjp)


def add(a, b):
    return _apply("add", (a, b), np.add,
                  lambda g, v, out: (_unbroadcast(g, v[0].shape), _unbroadcast(g, v[1].shape)))


def sub(a, b):
    return _apply("sub", (a, b), np.subtract,
                  lambda g, v, out: (_unbroadcast(g, v[0].shape), -_unbroadcast(g, v[1].shape)))


def mul(a, b):
    return _apply("mul", (a, b), np.multiply,
                  lambda g, v, out: (_unbroadcast(g * v[1], v[0].shape),
                                     _unbroadcast(g * v[0], v[1].shape)))


def scale(a, c: float):
    return _apply("scale", (a,), lambda x: x * c, lambda g, v, out: (g * c,))


def matmul(a, b):
    return _apply("matmul", (a, b), np.matmul, lambda g, v, out: (g @ v[1].T, v[0].T @ g))


def transpose(a):
    return _apply("transpose", (a,), np.transpose, lambda g, v, out: (g.T,))


def relu(a):
    return _apply("relu", (a,), lambda x: np.maximum(x, 0.0), lambda g, v, out: (g * (v[0] > 0),))


def identity(a):
    return _apply("identity", (a,), lambda x: x, lambda g, v, out: (g,))


def prelu(a, slope):
    def fwd(x, s):
        return np.where(x > 0, x, s * x)

    def vjp(g, v, out):
        x, s = v
        pos = x > 0
        return g * np.where(pos, 1.0, s), _unbroadcast(np.where(pos, 0.0, g * x), s.shape)

    return _apply("prelu", (a, slope), fwd, vjp)


def _sigmoid(x):
    return np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))


def sigmoid(a):
    return _apply("sigmoid", (a,), _sigmoid, lambda g, v, out: (g * out * (1.0 - out),))


def log_sigmoid(a):
    """log(sigmoid(x)) = -softplus(-x), computed without overflow."""
    def fwd(x):
        return np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))

    return _apply("log_sigmoid", (a,), fwd, lambda g, v, out: (g * _sigmoid(-v[0]),))


def exp(a):
    return _apply("exp", (a,), np.exp, lambda g, v, out: (g * out,))


def log(a):
    return _apply("log", (a,), np.log, lambda g, v, out: (g / v[0],))


def power(a, p: float):
    def vjp(g, v, out):
        x = v[0]
        if p == 1.0:
            return (g,)
        return (g * p * np.power(x, p - 1.0),)

    return _apply("power", (a,), lambda x: np.power(x, p), vjp)


def sum(a, axis=None):  # noqa: A001 - mirrors numpy naming
    def vjp(g, v, out):
        if axis is None:
            return (np.broadcast_to(g, v[0].shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), v[0].shape).copy(),)

    return _apply("sum", (a,), lambda x: np.sum(x, axis=axis), vjp)


def mean(a):
    def vjp(g, v, out):
        return (np.full(v[0].shape, g / max(v[0].size, 1)),)

    return _apply("mean", (a,), np.mean, vjp)


def take_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)

    def vjp(g, v, out):
        full = np.zeros_like(v[0])
        np.add.at(full, idx, g)
        return (full,)

    return _apply("take_rows", (a,), lambda x: x[idx], vjp)


def row_dot(a, b):
    """Row-wise inner products, shape (n,)."""
    return _apply("row_dot", (a, b), lambda x, y: np.einsum("ij,ij->i", x, y),
                  lambda g, v, out: (g[:, None] * v[1], g[:, None] * v[0]))


def row_normalize(a, eps: float = 1e-12):
    """Scale each row to unit Euclidean norm (rows of norm < eps are left ~0)."""
    def fwd(x):
        return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)

    def vjp(g, v, out):
        x = v[0]
        n = np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)
        return ((g - out * np.sum(g * out, axis=1, keepdims=True)) / n,)

    return _apply("row_normalize", (a,), fwd, vjp)


def row_cosine(a, b):
    """Cosine similarity between matching rows of ``a`` and ``b``."""
    return row_dot(row_normalize(a), row_normalize(b))


def cosine_matrix(a, b):
    """All-pairs cosine similarity between rows of ``a`` and rows of ``b``."""
    return matmul(row_normalize(a), transpose(row_normalize(b)))


def masked_logsumexp(a, mask):
    """Row-wise log sum_j mask_ij * exp(a_ij), max-shifted for stability."""
    mask = np.asarray(mask, dtype=bool)
    weight = mask.astype(np.float64)
    empty = ~mask.any(axis=1, keepdims=True)

    def fwd(x):
        m = np.max(np.where(mask, x, -np.inf), axis=1, keepdims=True)
        m[empty] = 0.0
        s = np.sum(np.exp(x - m) * weight, axis=1, keepdims=True)
        return (np.log(s) + m)[:, 0]

    def vjp(g, v, out):
        return (g[:, None] * (np.exp(v[0] - out[:, None]) * weight),)

    return _apply("masked_logsumexp", (a,), fwd, vjp)


def concat_cols(a, b):
    def vjp(g, v, out):
        k = v[0].shape[1]
        return g[:, :k], g[:, k:]

    return _apply("concat_cols", (a, b), lambda x, y: np.concatenate([x, y], axis=1), vjp)


def row_softmax(a):
    def fwd(x):
        e = np.exp(x - x.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def vjp(g, v, out):
        return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)

    return _apply("row_softmax", (a,), fwd, vjp)


def log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy(logits, labels, idx):
    """Mean negative log-likelihood of ``labels[idx]`` under row-softmax(logits[idx])."""
    idx = np.asarray(idx, dtype=np.int64)
    y = np.asarray(labels, dtype=np.int64)[idx]
    n = max(len(idx), 1)

    def fwd(x):
        if len(idx) == 0:
            return np.array(0.0)
        return np.array(-np.sum(log_softmax(x[idx])[np.arange(len(idx)), y]) / n)

    def vjp(g, v, out):
        full = np.zeros_like(v[0])
        if len(idx):
            p = np.exp(log_softmax(v[0][idx]))
            p[np.arange(len(idx)), y] -= 1.0
            np.add.at(full, idx, p * (g / n))
        return (full,)

    return _apply("cross_entropy", (logits,), fwd, vjp)
