"""Minimal reverse-mode automatic differentiation over numpy arrays.

Nodes hold array values; backward functions accumulate into `.grad`. The op
set is deliberately small: exactly what the latent-model log joint needs
(gathers of latent coordinates, affine combinations, softplus likelihood
terms, quadratic prior terms, reductions).
"""

from __future__ import annotations

import numpy as np


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) without overflow
    return np.logaddexp(0.0, x)


class Node:
    __slots__ = ("value", "grad", "parents", "_backward")

    def __init__(self, value, parents=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self._backward = None

    # -- graph construction ------------------------------------------------

    def __add__(self, other):
        if not isinstance(other, Node):
            return self.add_const(other)
        out = Node(self.value + other.value, (self, other))

        def backward(g):
            _accum(self, _unbroadcast(g, self.value.shape))
            _accum(other, _unbroadcast(g, other.value.shape))

        out._backward = backward
        return out

    def __neg__(self):
        out = Node(-self.value, (self,))
        out._backward = lambda g: _accum(self, -g)
        return out

    def __sub__(self, other):
        return self + (-other)

    def add_const(self, c):
        c = np.asarray(c, dtype=np.float64)
        out = Node(self.value + c, (self,))
        out._backward = lambda g: _accum(self, _unbroadcast(g, self.value.shape))
        return out

    def mul_const(self, c):
        c = np.asarray(c, dtype=np.float64)
        out = Node(self.value * c, (self,))
        out._backward = lambda g: _accum(self, _unbroadcast(g * c, self.value.shape))
        return out

    def gather_cols(self, idx: np.ndarray):
        """Select columns idx from a (K, d) array -> (K, len(idx))."""
        idx = np.asarray(idx, dtype=np.intp)
        out = Node(self.value[:, idx], (self,))

        def backward(g):
            acc = np.zeros_like(self.value)
            np.add.at(acc, (slice(None), idx), g)
            _accum(self, acc)

        out._backward = backward
        return out

    def slice_cols(self, start: int, stop: int):
        out = Node(self.value[:, start:stop], (self,))

        def backward(g):
            acc = np.zeros_like(self.value)
            acc[:, start:stop] = g
            _accum(self, acc)

        out._backward = backward
        return out

    def matmul_const(self, m: np.ndarray):
        m = np.asarray(m, dtype=np.float64)
        out = Node(self.value @ m, (self,))
        out._backward = lambda g: _accum(self, g @ m.T)
        return out

    def softplus(self):
        out = Node(_softplus(self.value), (self,))
        # d/dx log(1+e^x) = sigmoid(x)
        out._backward = lambda g: _accum(self, g * _sigmoid(self.value))
        return out

    def square(self):
        out = Node(self.value**2, (self,))
        out._backward = lambda g: _accum(self, 2.0 * g * self.value)
        return out

    def sum(self, axis=None):
        out = Node(self.value.sum(axis=axis), (self,))

        def backward(g):
            if axis is None:
                _accum(self, np.full_like(self.value, 1.0) * g)
            else:
                _accum(self, np.broadcast_to(np.expand_dims(g, axis), self.value.shape).copy())

        out._backward = backward
        return out

    # -- backward pass -----------------------------------------------------

    def backward(self, seed=1.0):
        order = _toposort(self)
        for n in order:
            n.grad = None
        self.grad = np.asarray(seed, dtype=np.float64) * np.ones_like(self.value)
        for n in order:
            if n._backward is not None and n.grad is not None:
                n._backward(n.grad)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _accum(node: Node, g: np.ndarray) -> None:
    if node.grad is None:
        node.grad = g.copy() if isinstance(g, np.ndarray) else np.asarray(g, dtype=np.float64)
    else:
        node.grad = node.grad + g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` after numpy broadcasting."""
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _toposort(root: Node) -> list[Node]:
    """Reverse topological order (root first)."""
    seen = set()
    order: list[Node] = []

    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    order.reverse()
    return order
