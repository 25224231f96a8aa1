"""Minimal reverse-mode differentiation over float64 numpy arrays.

Only the operations the forecasting model needs are provided. Several of them
(``linear``, ``layer_norm``, ``softmax``, ``ode_rate``) are fused into single
graph nodes to keep the per-node Python overhead low.
"""
from __future__ import annotations

import contextlib

import numpy as np

from . import kernels
from .numerics import LN_EPS, gelu_grad
from scipy.special import erf

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Skip graph construction inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")
    __array_ufunc__ = None  # numpy scalars defer to the reflected operators

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Accumulate d(self)/d(leaf) into ``.grad`` of every leaf that requires it."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _result(
        ad * bd,
        (a, b),
        lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)),
    )


def matmul(a, b) -> Tensor:
    """``np.matmul`` with broadcasting over leading dimensions."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(bd, -1, -2)), ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(ad, -1, -2), g), bd.shape)
        return ga, gb

    return _result(np.matmul(ad, bd), (a, b), backward)


def linear(x, W, b=None) -> Tensor:
    """``x @ W.T + b`` with ``W`` stored as (out, in)."""
    x = as_tensor(x)
    xd, Wd = x.data, W.data
    out = xd @ Wd.T
    if b is not None:
        out = out + b.data

    def backward(g):
        g2 = g.reshape(-1, g.shape[-1])
        gx = g @ Wd if x.requires_grad else None
        gW = g2.T @ xd.reshape(-1, xd.shape[-1]) if W.requires_grad else None
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gW, gb

    parents = (x, W) if b is None else (x, W, b)
    return _result(out, parents, backward)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),))


def gelu(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    y = 0.5 * xd * (1.0 + erf(xd / np.sqrt(2.0)))
    return _result(y, (x,), lambda g: (g * gelu_grad(xd),))


def sum(x, axis=None, keepdims=False) -> Tensor:  # noqa: A001
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _result(x.data.sum(axis=axis, keepdims=keepdims), (x,), backward)


def mean(x, axis=None, keepdims=False) -> Tensor:
    x = as_tensor(x)
    n = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(n))


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    orig = x.shape
    return _result(x.data.reshape(shape), (x,), lambda g: (g.reshape(orig),))


def transpose(x, axes) -> Tensor:
    x = as_tensor(x)
    inv = np.argsort(axes)
    return _result(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def backward(g):
        out = np.zeros(shape)
        if _fancy(idx):
            np.add.at(out, idx, g)
        else:
            out[idx] = g
        return (out,)

    return _result(x.data[idx], (x,), backward)


def _fancy(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def concat(tensors, axis=-1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def softmax(x, axis=-1) -> Tensor:
    x = as_tensor(x)
    z = np.exp(x.data - x.data.max(axis=axis, keepdims=True))
    y = z / z.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (x,), backward)


def layer_norm(x, gain, bias, eps: float = LN_EPS) -> Tensor:
    """LayerNorm over the last axis (population variance)."""
    x = as_tensor(x)
    xd = x.data
    n = xd.shape[-1]
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    gd = gain.data

    def backward(g):
        lead = g.reshape(-1, n)
        ggain = (lead * xhat.reshape(-1, n)).sum(axis=0)
        gbias = lead.sum(axis=0)
        gh = g * gd
        gx = rstd * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, ggain, gbias

    return _result(xhat * gd + bias.data, (x, gain, bias), backward)


def ode_rate(x, nu, mu, f, alpha, corr, gamma: float) -> Tensor:
    """Clamped latitude-stencil rate; see ``physode.ode_rhs``."""
    x, corr = as_tensor(x), as_tensor(corr)
    xd = np.ascontiguousarray(x.data)
    cd = np.ascontiguousarray(corr.data)
    a = float(alpha.data)
    rate, th = kernels.ode_rate_forward(xd, nu.data, mu.data, f.data, a, cd, gamma)

    def backward(g):
        gx, gnu, gmu, gf, galpha, gcorr = kernels.ode_rate_backward(
            np.ascontiguousarray(g), th, xd, nu.data, mu.data, a, cd, gamma
        )
        return gx, gnu, gmu, gf, np.asarray(galpha).reshape(alpha.shape), gcorr

    return _result(rate, (x, nu, mu, f, alpha, corr), backward)
