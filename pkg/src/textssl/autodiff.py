"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

Graphs are built implicitly: each op output keeps references to its parent
tensors plus a closure that computes vector-Jacobian products. Node ids grow
monotonically with creation order, so sorting reachable nodes by id yields a
valid topological order for the backward sweep. A graph is meant to live on
one thread; tensors detached from any graph can move freely.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

_ids = itertools.count()
_grad_enabled = True


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's rules."""


class GradCheckError(RuntimeError):
    """Raised when finite-difference verification hits a non-finite value."""


@contextmanager
def no_grad():
    """Suspend graph recording inside the block (inference, constants)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense float64 value with an optional differentiation record."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self.node_id = next(_ids)
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; scalars mean python floats, not 0-d tensors
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __truediv__(self, s):
        if isinstance(s, Tensor):
            raise ShapeError("division only supported by python scalars")
        return mul(self, 1.0 / s)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)


def _result(data, parents, vjp):
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._vjp = vjp
    return out


def constant(data):
    """Tensor that never records gradients (detached input)."""
    return Tensor(data)


def parameter(data):
    return Tensor(data, requires_grad=True)


# ---------------------------------------------------------------------------
# op catalog
# ---------------------------------------------------------------------------

def add(a, b):
    if isinstance(b, (int, float)):
        return _result(a.data + b, (a,), lambda g: (g,))
    if a.data.shape == b.data.shape:
        return _result(a.data + b.data, (a, b), lambda g: (g, g))
    # matrix + row-vector bias, the one broadcast the recognizer needs
    if a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]:
        return _result(a.data + b.data, (a, b), lambda g: (g, g.sum(axis=0)))
    raise ShapeError(f"add: incompatible shapes {a.data.shape} and {b.data.shape}")


def sub(a, b):
    if isinstance(b, (int, float)):
        return _result(a.data - b, (a,), lambda g: (g,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} and {b.data.shape}")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    if isinstance(b, (int, float)):
        s = float(b)
        return _result(a.data * s, (a,), lambda g: (g * s,))
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: incompatible shapes {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def matmul(a, b):
    ad, bd = a.data, b.data
    if ad.ndim == 0 or bd.ndim == 0 or ad.shape[-1 if ad.ndim > 1 else 0] != bd.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = ad @ bd

    def vjp(g):
        if ad.ndim == 2 and bd.ndim == 2:
            return g @ bd.T, ad.T @ g
        if ad.ndim == 1 and bd.ndim == 2:
            return bd @ g, np.outer(ad, g)
        if ad.ndim == 2 and bd.ndim == 1:
            return np.outer(g, bd), ad.T @ g
        return g * bd, g * ad  # 1-d dot

    return _result(out, (a, b), vjp)


def exp(t):
    e = np.exp(t.data)
    return _result(e, (t,), lambda g: (g * e,))


def log(t):
    if np.any(t.data <= 0.0):
        raise ValueError("log: non-positive input")
    d = t.data
    return _result(np.log(d), (t,), lambda g: (g / d,))


def tanh(t):
    y = np.tanh(t.data)
    return _result(y, (t,), lambda g: (g * (1.0 - y * y),))


def relu(t):
    mask = t.data > 0.0  # relu'(0) := 0
    return _result(np.where(mask, t.data, 0.0), (t,), lambda g: (g * mask,))


def softmax(t, axis=-1):
    z = t.data - t.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result(s, (t,), vjp)


def log_softmax(t, axis=-1):
    z = t.data - t.data.max(axis=axis, keepdims=True)
    ls = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    s = np.exp(ls)

    def vjp(g):
        return (g - s * g.sum(axis=axis, keepdims=True),)

    return _result(ls, (t,), vjp)


def tsum(t, axis=None):
    shape = t.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape),)

    return _result(t.data.sum(axis=axis), (t,), vjp)


def tmean(t, axis=None):
    n = t.data.size if axis is None else t.data.shape[axis]
    shape = t.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g / n, shape),)
        return (np.broadcast_to(np.expand_dims(g, axis) / n, shape),)

    return _result(t.data.mean(axis=axis), (t,), vjp)


def concat(tensors, axis=0):
    if not tensors:
        raise ShapeError("concat: empty input list")
    datas = [t.data for t in tensors]
    offsets = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def vjp(g):
        return tuple(np.split(g, offsets, axis=axis))

    return _result(np.concatenate(datas, axis=axis), tuple(tensors), vjp)


def take(t, index, axis=0):
    """Gather one slice along the leading axis: a matrix row or vector entry."""
    if axis != 0:
        raise ShapeError("take: only axis 0 supported")
    idx = int(index)
    out = t.data[idx]
    shape = t.data.shape

    def vjp(g):
        z = np.zeros(shape)
        z[idx] = g
        return (z,)

    return _result(out, (t,), vjp)


def amax(t, axis=None):
    # ties resolved toward the lowest index (argmax picks first occurrence)
    d = t.data
    if axis is None:
        flat_idx = int(np.argmax(d))

        def vjp(g):
            z = np.zeros(d.size)
            z[flat_idx] = g
            return (z.reshape(d.shape),)

        return _result(d.max(), (t,), vjp)

    idx = np.argmax(d, axis=axis)

    def vjp_axis(g):
        z = np.zeros_like(d)
        np.put_along_axis(z, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis)
        return (z,)

    return _result(d.max(axis=axis), (t,), vjp_axis)


def l2_norm(t):
    n = float(np.sqrt((t.data ** 2).sum()))
    safe = max(n, 1e-12)
    d = t.data
    return _result(np.asarray(n), (t,), lambda g: (g * d / safe,))


def cosine_similarity(a, b):
    """Cosine of the angle between two 1-d vectors, norms floored at 1e-12."""
    if a.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"cosine-similarity: need equal 1-d shapes, got {a.data.shape} and {b.data.shape}")
    ad, bd = a.data, b.data
    na = max(float(np.sqrt(ad @ ad)), 1e-12)
    nb = max(float(np.sqrt(bd @ bd)), 1e-12)
    c = float(ad @ bd) / (na * nb)

    def vjp(g):
        ga = g * (bd / (na * nb) - c * ad / (na * na))
        gb = g * (ad / (na * nb) - c * bd / (nb * nb))
        return ga, gb

    return _result(np.asarray(c), (a, b), vjp)


def st_gumbel(logits, temperature, rng):
    """Straight-through Gumbel-Softmax sample over a 1-d logit vector.

    Forward value is exactly one-hot at argmax(logits + g) with Gumbel noise
    g = -log(-log(u)); the backward pass routes gradients as if the output
    were softmax((logits + g) / temperature).
    """
    if temperature <= 0.0:
        raise ValueError(f"st_gumbel: temperature must be positive, got {temperature}")
    if logits.data.ndim != 1:
        raise ShapeError(f"st_gumbel: need a 1-d logit vector, got shape {logits.data.shape}")
    u = np.clip(rng.random(logits.data.shape), 1e-12, 1.0 - 1e-12)
    g = -np.log(-np.log(u))
    soft = softmax(mul(add(logits, Tensor(g)), 1.0 / temperature), axis=-1)
    hard = np.zeros_like(soft.data)
    hard[int(np.argmax(soft.data))] = 1.0
    return _result(hard, (soft,), lambda grad: (grad,))


_CATALOG = {
    "add": add,
    "sub": sub,
    "elementwise-mul": mul,
    "scalar-mul": mul,
    "matmul": matmul,
    "exp": exp,
    "log": log,
    "tanh": tanh,
    "relu": relu,
    "softmax": softmax,
    "log-softmax": log_softmax,
    "sum": tsum,
    "mean": tmean,
    "concat": concat,
    "take": take,
    "max": amax,
    "l2-norm": l2_norm,
    "cosine-similarity": cosine_similarity,
}


def apply(op_kind, *inputs, **kwargs):
    """Dispatch an op by catalog name (used by the gradcheck CLI walker)."""
    try:
        fn = _CATALOG[op_kind]
    except KeyError:
        raise ValueError(f"unknown op kind {op_kind!r}") from None
    return fn(*inputs, **kwargs)


def catalog_ops():
    return sorted(_CATALOG)


# ---------------------------------------------------------------------------
# backward sweep and finite-difference verification
# ---------------------------------------------------------------------------

def backward(loss):
    """Accumulate reverse-mode gradients into every requires_grad leaf.

    Returns a map node_id -> gradient Tensor for the leaves reached.
    """
    if loss.data.ndim != 0:
        raise ValueError(f"backward: loss must be a scalar, got shape {loss.data.shape}")
    if not loss.requires_grad:
        return {}

    stack = [loss]
    seen = {loss.node_id}
    nodes = []
    while stack:
        t = stack.pop()
        nodes.append(t)
        for p in t._parents:
            if p.requires_grad and p.node_id not in seen:
                seen.add(p.node_id)
                stack.append(p)
    nodes.sort(key=lambda t: t.node_id, reverse=True)

    grads = {loss.node_id: np.ones(())}
    leaf_grads = {}
    for t in nodes:
        g = grads.pop(t.node_id, None)
        if g is None:
            continue
        if t._vjp is None:
            t.grad = g if t.grad is None else t.grad + g
            leaf_grads[t.node_id] = Tensor(g)
            continue
        for p, pg in zip(t._parents, t._vjp(g)):
            if not p.requires_grad:
                continue
            acc = grads.get(p.node_id)
            grads[p.node_id] = pg if acc is None else acc + pg
    return leaf_grads


def zero_grads(params):
    for p in params:
        p.grad = None


def grad_check(f, params, epsilon=1e-5):
    """Compare reverse-mode gradients of f(params) against central differences.

    Returns the worst relative error over all coordinates, with
    rel(a, b) = |a - b| / max(1e-8, |a| + |b|).
    """
    zero_grads(params)
    base = f(params)
    if not np.isfinite(base.data):
        raise GradCheckError("non-finite forward value at the base point")
    backward(base)
    analytic = [np.zeros_like(p.data) if p.grad is None else np.array(p.grad, copy=True) for p in params]

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.data.reshape(-1)
        ana = analytic[k].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            f_plus = float(f(params).data)
            flat[i] = orig - epsilon
            f_minus = float(f(params).data)
            flat[i] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError(f"non-finite forward value at param {k}, coordinate {i}")
            numeric = (f_plus - f_minus) / (2.0 * epsilon)
            rel = abs(ana[i] - numeric) / max(1e-8, abs(ana[i]) + abs(numeric))
            worst = max(worst, rel)
    zero_grads(params)
    return worst
