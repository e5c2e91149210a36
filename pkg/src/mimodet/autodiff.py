"""Reverse-mode tape over numpy arrays.

Deliberately small: exactly the operations the detector networks and their
training loop need, not a general autodiff framework. Values are ndarrays;
gradients accumulate into Tensor.grad during backward().
"""

import contextlib

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    __slots__ = ("value", "grad", "parents", "requires_grad")

    def __init__(self, value, requires_grad=False, parents=()):
        self.value = np.asarray(value)
        self.grad = None
        # parents: tuple of (Tensor, vjp) pairs, dropped when grads are off
        self.parents = parents if (_GRAD_ENABLED and requires_grad) else ()
        self.requires_grad = requires_grad and _GRAD_ENABLED

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        return Tensor(self.value)

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Reduce a broadcasted gradient back to `shape`."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _make(value, parent_vjps):
    """Build an op output; parent_vjps is ((tensor, vjp), ...)."""
    parents = tuple((p, vjp) for p, vjp in parent_vjps if isinstance(p, Tensor) and p.requires_grad)
    return Tensor(value, requires_grad=bool(parents), parents=parents)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value + b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(g, b.value.shape)),
        ),
    )


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value - b.value,
        (
            (a, lambda g: _unbroadcast(g, a.value.shape)),
            (b, lambda g: _unbroadcast(-g, b.value.shape)),
        ),
    )


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.value * b.value,
        (
            (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
        ),
    )


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _make(
        out,
        (
            (a, lambda g: _unbroadcast(g / b.value, a.value.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.value, b.value.shape)),
        ),
    )


def square(a):
    a = as_tensor(a)
    return _make(a.value**2, ((a, lambda g: g * (2.0 * a.value)),))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, ((a, lambda g: g * (0.5 / out)),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, ((a, lambda g: g * out),))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.value), ((a, lambda g: g / a.value),))


def relu(a):
    a = as_tensor(a)
    mask = a.value > 0
    return _make(np.where(mask, a.value, 0.0), ((a, lambda g: g * mask),))


def sigmoid(a):
    a = as_tensor(a)
    out = expit(a.value)
    return _make(out, ((a, lambda g: g * out * (1.0 - out)),))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, ((a, lambda g: g * (1.0 - out**2)),))


def clamp_min(a, lo):
    a = as_tensor(a)
    mask = a.value >= lo
    return _make(np.where(mask, a.value, lo), ((a, lambda g: g * mask),))


def where(cond, a, b):
    """Select by a constant boolean mask."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond)
    return _make(
        np.where(cond, a.value, b.value),
        (
            (a, lambda g: _unbroadcast(g * cond, a.value.shape)),
            (b, lambda g: _unbroadcast(g * ~cond, b.value.shape)),
        ),
    )


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(
        av @ bv,
        (
            (a, lambda g: _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)),
            (b, lambda g: _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)),
        ),
    )


def matvec(a, x):
    """Batched matrix-vector product (..., i, j) @ (..., j) -> (..., i)."""
    a, x = as_tensor(a), as_tensor(x)
    av, xv = a.value, x.value
    out = np.einsum("...ij,...j->...i", av, xv)
    return _make(
        out,
        (
            (a, lambda g: _unbroadcast(g[..., :, None] * xv[..., None, :], av.shape)),
            (x, lambda g: _unbroadcast(np.einsum("...ji,...j->...i", av, g), xv.shape)),
        ),
    )


def dot_last(a, w):
    """einsum('...m,m->...', a, w); mirrors the numpy moment reduction bitwise."""
    a, w = as_tensor(a), as_tensor(w)
    av, wv = a.value, w.value
    return _make(
        np.einsum("...m,m->...", av, wv),
        (
            (a, lambda g: g[..., None] * wv),
            (w, lambda g: _unbroadcast(g[..., None] * av, wv.shape)),
        ),
    )


def sumprod_last(a, b):
    """einsum('...m,...m->...', a, b); rowwise dot over the trailing axis."""
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    return _make(
        np.einsum("...m,...m->...", av, bv),
        (
            (a, lambda g: _unbroadcast(g[..., None] * bv, av.shape)),
            (b, lambda g: _unbroadcast(g[..., None] * av, bv.shape)),
        ),
    )


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        g_exp = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g_exp, a.value.shape).copy()

    return _make(a.value.sum(axis=axis, keepdims=keepdims), ((a, vjp),))


def broadcast_to(a, shape):
    a = as_tensor(a)
    return _make(
        np.broadcast_to(a.value, shape), ((a, lambda g: _unbroadcast(g, a.value.shape)),)
    )


def reshape(a, shape):
    a = as_tensor(a)
    return _make(a.value.reshape(shape), ((a, lambda g: g.reshape(a.value.shape)),))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    values = [t.value for t in tensors]
    sizes = [v.shape[axis] for v in values]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            index = [slice(None)] * g.ndim
            index[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(index)]

        return vjp

    return _make(
        np.concatenate(values, axis=axis), tuple((t, make_vjp(i)) for i, t in enumerate(tensors))
    )


def getitem(a, idx):
    a = as_tensor(a)

    def vjp(g):
        out = np.zeros_like(a.value)
        np.add.at(out, idx, g)
        return out

    return _make(a.value[idx], ((a, vjp),))


def softmax(a, axis=-1):
    a = as_tensor(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (g - (g * out).sum(axis=axis, keepdims=True)) * out

    return _make(out, ((a, vjp),))


def diagonal(a):
    """Diagonal of the trailing two axes."""
    a = as_tensor(a)
    k = a.value.shape[-1]
    idx = np.arange(k)

    def vjp(g):
        out = np.zeros_like(a.value)
        out[..., idx, idx] = g
        return out

    return _make(np.diagonal(a.value, axis1=-2, axis2=-1).copy(), ((a, vjp),))


def spd_inverse_of(lam, a_base, spd_inverse_fn):
    """Inverse of a_base + diag(lam) for SPD stacks, differentiable in lam.

    a_base is a constant ndarray; d(A^-1) = -A^-1 dA A^-1 gives the
    diagonal-restricted pullback onto lam.
    """
    lam = as_tensor(lam)
    k = a_base.shape[-1]
    a = a_base + lam.value[..., None] * np.eye(k, dtype=a_base.dtype)
    sigma = spd_inverse_fn(a)
    idx = np.arange(k)

    def vjp(g):
        a_bar = -sigma @ g @ sigma
        return a_bar[..., idx, idx]

    return _make(sigma, ((lam, vjp),))


def backward(root, seed=None):
    """Accumulate gradients of `root` into every reachable requires_grad Tensor."""
    if not root.requires_grad:
        raise ValueError("backward() on a tensor that does not require grad")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    if seed is None:
        seed = np.ones_like(root.value)
    root.grad = np.asarray(seed, dtype=root.value.dtype)
    for node in reversed(topo):
        if node.grad is None:
            continue
        for parent, vjp in node.parents:
            contribution = vjp(node.grad)
            if parent.grad is None:
                parent.grad = contribution.copy() if contribution.base is not None else contribution
            else:
                parent.grad = parent.grad + contribution
