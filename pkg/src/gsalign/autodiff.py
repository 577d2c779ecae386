"""Minimal reverse-mode automatic differentiation over numpy arrays.

The training path needs exact analytic gradients through convolutions,
batch/layer normalization, attention softmax, max-pooling and the output
L2 normalization. The handful of array operations involved are implemented
as taped primitives; gradients fall out of one reverse sweep over the tape.

Conventions pinned here:
  - ``tmax`` routes its subgradient to the first (lowest-index) argmax.
  - ``relu`` uses subgradient 0 at the kink.
  - Broadcasting in elementwise ops is mirrored by sum-reduction in the
    backward pass.
Operands that are plain ndarrays or scalars are treated as constants and
never receive gradients, which is how frozen teacher embeddings stay
frozen.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf as _erf

_INV_SQRT2 = float(1.0 / np.sqrt(2.0))


class Tensor:
    """A numpy array plus the tape edge that produced it."""

    __slots__ = ("data", "grad", "_parents", "_vjp")

    def __init__(self, data, parents=(), vjp=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad = None
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"

    # operator sugar
    def __neg__(self):
        return neg(self)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg_const_or_tensor(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)


def _data(x):
    return x.data if isinstance(x, Tensor) else x


def neg_const_or_tensor(x):
    return neg(x) if isinstance(x, Tensor) else -np.asarray(x)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary(a, b, out_data, vjp_a, vjp_b):
    """Build a node from two operands, keeping only Tensor parents."""
    parents = []
    fns = []
    if isinstance(a, Tensor):
        parents.append(a)
        fns.append(vjp_a)
    if isinstance(b, Tensor):
        parents.append(b)
        fns.append(vjp_b)
    if not parents:
        return Tensor(out_data)

    def vjp(g):
        return tuple(f(g) for f in fns)

    return Tensor(out_data, tuple(parents), vjp)


# ---------------------------------------------------------------------------
# primitives


def neg(a: Tensor) -> Tensor:
    return Tensor(-a.data, (a,), lambda g: (-g,))


def add(a, b):
    ad, bd = _data(a), _data(b)
    out = ad + bd
    asl = np.shape(ad)
    bsl = np.shape(bd)
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g, asl),
        lambda g: _unbroadcast(g, bsl),
    )


def mul(a, b):
    ad, bd = _data(a), _data(b)
    out = ad * bd
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g * bd, np.shape(ad)),
        lambda g: _unbroadcast(g * ad, np.shape(bd)),
    )


def div(a, b):
    ad, bd = _data(a), _data(b)
    out = ad / bd
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(g / bd, np.shape(ad)),
        lambda g: _unbroadcast(-g * ad / (bd * bd), np.shape(bd)),
    )


def matmul(a, b):
    ad, bd = _data(a), _data(b)
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must have rank >= 2")
    out = np.matmul(ad, bd)
    return _binary(
        a, b, out,
        lambda g: _unbroadcast(np.matmul(g, bd.swapaxes(-1, -2)), ad.shape),
        lambda g: _unbroadcast(np.matmul(ad.swapaxes(-1, -2), g), bd.shape),
    )


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return Tensor(np.transpose(a.data, axes), (a,),
                  lambda g: (np.transpose(g, inv),))


def getitem(a: Tensor, idx) -> Tensor:
    out = a.data[idx]
    shape = a.data.shape
    dtype = a.data.dtype

    def vjp(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor(out, (a,), vjp)


def concat(tensors, axis: int) -> Tensor:
    datas = [_data(t) for t in tensors]
    out = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)
    parents = []
    slots = []
    for i, t in enumerate(tensors):
        if isinstance(t, Tensor):
            parents.append(t)
            slots.append(i)

    def vjp(g):
        pieces = []
        for i in slots:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(g[tuple(sl)])
        return tuple(pieces)

    return Tensor(out, tuple(parents), vjp)


def expand(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    return Tensor(np.broadcast_to(a.data, shape).copy(), (a,),
                  lambda g: (_unbroadcast(g, old),))


def pad_axis(a: Tensor, axis: int, before: int, after: int) -> Tensor:
    widths = [(0, 0)] * a.data.ndim
    widths[axis] = (before, after)
    out = np.pad(a.data, widths)
    n = a.data.shape[axis]

    def vjp(g):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(before, before + n)
        return (g[tuple(sl)],)

    return Tensor(out, (a,), vjp)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor(out, (a,), vjp)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.data.size
    elif isinstance(axis, tuple):
        n = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        n = a.data.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route the gradient to the lowest index."""
    out = a.data.max(axis=axis, keepdims=keepdims)
    idx = np.argmax(a.data, axis=axis)
    shape = a.data.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros(shape, dtype=a.data.dtype)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        return (full,)

    return Tensor(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return Tensor(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor(out, (a,), lambda g: (g * (0.5 / out),))


_TWO_OVER_SQRT_PI = float(2.0 / np.sqrt(np.pi))


def erf(a: Tensor) -> Tensor:
    d = a.data
    return Tensor(_erf(d), (a,),
                  lambda g: (g * _TWO_OVER_SQRT_PI * np.exp(-d * d),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor(np.where(mask, a.data, 0), (a,),
                  lambda g: (np.where(mask, g, 0),))


# ---------------------------------------------------------------------------
# composites (built from primitives; no new backward rules)


def gelu(a: Tensor) -> Tensor:
    """Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2)))."""
    return mul(mul(a, 0.5), add(erf(mul(a, _INV_SQRT2)), 1.0))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)  # constant shift
    e = exp(add(a, -m))
    return div(e, tsum(e, axis=axis, keepdims=True))


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    mu = tmean(x, axis=-1, keepdims=True)
    xc = add(x, neg(mu))
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(xc, inv), gamma), beta)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    norm = sqrt(tsum(mul(x, x), axis=axis, keepdims=True))
    return div(x, norm)


def logsumexp(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    m = a.data.max(axis=axis, keepdims=True)  # constant shift
    s = tsum(exp(add(a, -m)), axis=axis, keepdims=keepdims)
    mk = m if keepdims else np.squeeze(m, axis=axis)
    return add(log(s), mk)


# ---------------------------------------------------------------------------
# reverse sweep


def backward(root: Tensor, seed: np.ndarray | None = None) -> None:
    """Run one reverse sweep from ``root``, accumulating into ``.grad``.

    Iterative topological order; recursion would overflow on deep stacks
    of transformer layers.
    """
    if seed is None:
        seed = np.ones_like(root.data)
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))

    root.grad = np.asarray(seed, dtype=root.data.dtype)
    for node in reversed(topo):
        if node._vjp is None or node.grad is None:
            continue
        grads = node._vjp(node.grad)
        for parent, g in zip(node._parents, grads):
            if g is None:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
