"""Minimal reverse-mode differentiation over numpy arrays.

A :class:`Var` wraps an array and remembers how it was made. ``backward``
walks the recorded graph in reverse topological order and accumulates
vector-Jacobian products. The graph is rebuilt on every forward pass; there
is no caching. Every primitive checks its output and raises
:class:`NonFiniteError` naming itself on NaN/Inf.

The helper functions (``exp``, ``log``, ``logsumexp`` ...) accept plain
arrays too and then just compute values, so loss code can be written once
and run with or without a tape.
"""
from __future__ import annotations

import numpy as np


class NonFiniteError(FloatingPointError):
    def __init__(self, primitive):
        self.primitive = primitive
        super().__init__(f"non-finite value produced by primitive '{primitive}'")


class Var:
    __slots__ = ("value", "parents", "grad", "op")
    __array_priority__ = 100

    def __init__(self, value, parents=(), op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents  # tuple of (Var, vjp)
        self.grad = None
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other))

    def __rsub__(self, other):
        return add(other, neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, idx):
        return index(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 else shape)


def _wrap(x):
    return x if isinstance(x, Var) else Var(x, op="const")


def _checked(value, name):
    value = np.asarray(value, dtype=np.float64)
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(name)
    return value


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


# ---- primitives -------------------------------------------------------------

def add(a, b):
    if not _any_var(a, b):
        return np.add(a, b)
    a, b = _wrap(a), _wrap(b)
    out = _checked(a.value + b.value, "add")
    return Var(out, ((a, lambda g: _unbroadcast(g, a.shape)),
                     (b, lambda g: _unbroadcast(g, b.shape))), "add")


def neg(a):
    if not isinstance(a, Var):
        return np.negative(a)
    return Var(-a.value, ((a, lambda g: -g),), "neg")


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    out = _checked(av * bv, "mul")
    return Var(out, ((a, lambda g: _unbroadcast(g * bv, av.shape)),
                     (b, lambda g: _unbroadcast(g * av, bv.shape))), "mul")


def div(a, b):
    if not _any_var(a, b):
        return np.divide(a, b)
    a, b = _wrap(a), _wrap(b)
    av, bv = a.value, b.value
    out = _checked(av / bv, "div")
    return Var(out, ((a, lambda g: _unbroadcast(g / bv, av.shape)),
                     (b, lambda g: _unbroadcast(-g * out / bv, bv.shape))), "div")


def square(a):
    if not isinstance(a, Var):
        return np.square(a)
    v = a.value
    return Var(_checked(v * v, "square"), ((a, lambda g: 2.0 * v * g),), "square")


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = _checked(np.exp(a.value), "exp")
    return Var(out, ((a, lambda g: g * out),), "exp")


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    v = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _checked(np.log(v), "log")
    return Var(out, ((a, lambda g: g / v),), "log")


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    out = _checked(np.sqrt(a.value), "sqrt")
    return Var(out, ((a, lambda g: g * 0.5 / out),), "sqrt")


def silu(a):
    if not isinstance(a, Var):
        return a * sigmoid(a)
    v = a.value
    sig = sigmoid(v)
    out = _checked(v * sig, "silu")
    return Var(out, ((a, lambda g: g * (sig * (1.0 + v * (1.0 - sig)))),), "silu")


def sigmoid(a):
    v = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    # split by sign so exp never overflows
    e = np.exp(-np.abs(v))
    sig = np.where(v >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    if not isinstance(a, Var):
        return sig
    out = _checked(sig, "sigmoid")
    return Var(out, ((a, lambda g: g * out * (1.0 - out)),), "sigmoid")


def sum(a, axis=None):  # noqa: A001 - mirrors numpy
    if not isinstance(a, Var):
        return np.sum(a, axis=axis)
    shape = a.shape
    out = _checked(np.sum(a.value, axis=axis), "sum")

    def vjp(g):
        if axis is not None:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, shape)
    return Var(out, ((a, vjp),), "sum")


def mean(a, axis=None):
    n = np.size(a.value if isinstance(a, Var) else a) if axis is None else (
        (a.value if isinstance(a, Var) else np.asarray(a)).shape[axis])
    return mul(sum(a, axis=axis), 1.0 / n)


def logsumexp(a, axis=-1):
    """Max-shifted log-sum-exp along ``axis``."""
    v = a.value if isinstance(a, Var) else np.asarray(a, dtype=np.float64)
    shift = np.max(v, axis=axis, keepdims=True)
    shift = np.where(np.isfinite(shift), shift, 0.0)
    ex = np.exp(v - shift)
    s = np.sum(ex, axis=axis, keepdims=True)
    out = np.squeeze(np.log(s) + shift, axis=axis)
    if not isinstance(a, Var):
        return out
    out = _checked(out, "logsumexp")
    soft = ex / s
    return Var(out, ((a, lambda g: np.expand_dims(g, axis) * soft),), "logsumexp")


def affine(x, w, b):
    """``x @ w + b`` for a batch ``x`` of shape (n, d_in)."""
    if not _any_var(x, w, b):
        return np.asarray(x) @ w + b
    x, w, b = _wrap(x), _wrap(w), _wrap(b)
    xv, wv = x.value, w.value
    out = _checked(xv @ wv + b.value, "affine")
    return Var(out, ((x, lambda g: g @ wv.T),
                     (w, lambda g: xv.T @ g),
                     (b, lambda g: g.sum(axis=0))), "affine")


def index(a, idx):
    if not isinstance(a, Var):
        return np.asarray(a)[idx]
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        if isinstance(idx, slice):
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return full
    return Var(a.value[idx], ((a, vjp),), "index")


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.shape
    return Var(a.value.reshape(shape), ((a, lambda g: g.reshape(old)),), "reshape")


def value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


# ---- driver -----------------------------------------------------------------

def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root):
    """Populate ``.grad`` on every node reachable from scalar ``root``."""
    if root.value.shape != ():
        raise ValueError("backward needs a scalar output")
    order = _toposort(root)
    for node in order:
        node.grad = None
    root.grad = np.ones(())
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, vjp in node.parents:
            if parent.op == "const":
                continue
            contrib = vjp(g)
            parent.grad = contrib if parent.grad is None else parent.grad + contrib


def value_and_grad(fn, x):
    """(fn(x), dfn/dx) for scalar ``fn`` of a flat array ``x``."""
    leaf = Var(np.array(x, dtype=np.float64, copy=True))
    out = fn(leaf)
    if not isinstance(out, Var):
        return float(out), np.zeros_like(leaf.value)
    backward(out)
    g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)
    return float(out.value), np.array(g, dtype=np.float64)
