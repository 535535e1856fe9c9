"""Minimal reverse-mode automatic differentiation on numpy arrays.

A :class:`Tensor` wraps an ndarray plus the closures needed to push a
gradient back to its parents. The op set is exactly what the refiner models
need; convolution, RoI pooling, and point lookup route through the kernels
module so the numba/numpy backend choice applies to gradients too.
"""

from __future__ import annotations

import numpy as np

from . import kernels


class Tensor:
    __slots__ = ("data", "grad", "parents", "requires_grad")

    def __init__(self, data, parents=(), requires_grad=False):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p, _ in parents)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        return reshape(self, shape)

    def sum(self, axis=None):
        return tsum(self, axis)

    def mean(self, axis=None):
        return tmean(self, axis)

    def backward(self, grad=None):
        """Accumulate gradients of this tensor into every ancestor's .grad."""
        if grad is None:
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad = node.grad + g
            for parent, vjp in node.parents:
                if not parent.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib


def _topo_order(root: Tensor):
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    return list(reversed(order))


def wrap(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def parameter(data) -> Tensor:
    return Tensor(np.asarray(data), requires_grad=True)


def _wrap2(a, b) -> tuple[Tensor, Tensor]:
    """Wrap a binary-op pair; bare python scalars adopt the tensor's dtype so
    float32 graphs are not silently promoted."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        return a, Tensor(np.asarray(b, dtype=a.data.dtype))
    if isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        return Tensor(np.asarray(a, dtype=b.data.dtype)), b
    return wrap(a), wrap(b)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to a broadcast operand's original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    return Tensor(
        a.data + b.data,
        parents=(
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ),
    )


def sub(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    return Tensor(
        a.data - b.data,
        parents=(
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ),
    )


def mul(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    return Tensor(
        a.data * b.data,
        parents=(
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ),
    )


def div(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    out = a.data / b.data
    return Tensor(
        out,
        parents=(
            (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * out / b.data, b.data.shape)),
        ),
    )


def maximum(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    mask = a.data >= b.data
    return Tensor(
        np.maximum(a.data, b.data),
        parents=(
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ),
    )


def minimum(a, b) -> Tensor:
    a, b = _wrap2(a, b)
    mask = a.data <= b.data
    return Tensor(
        np.minimum(a.data, b.data),
        parents=(
            (a, lambda g: _unbroadcast(g * mask, a.data.shape)),
            (b, lambda g: _unbroadcast(g * ~mask, b.data.shape)),
        ),
    )


def clip(a, lo: float, hi: float) -> Tensor:
    a = wrap(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return Tensor(np.clip(a.data, lo, hi), parents=((a, lambda g: g * mask),))


def exp(a) -> Tensor:
    a = wrap(a)
    out = np.exp(a.data)
    return Tensor(out, parents=((a, lambda g: g * out),))


def log(a) -> Tensor:
    a = wrap(a)
    return Tensor(np.log(a.data), parents=((a, lambda g: g / a.data),))


def absolute(a) -> Tensor:
    a = wrap(a)
    sign = np.sign(a.data)
    return Tensor(np.abs(a.data), parents=((a, lambda g: g * sign),))


def relu(a) -> Tensor:
    a = wrap(a)
    mask = a.data > 0
    return Tensor(a.data * mask, parents=((a, lambda g: g * mask),))


def sigmoid(a) -> Tensor:
    a = wrap(a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, parents=((a, lambda g: g * out * (1.0 - out)),))


def softplus(a) -> Tensor:
    a = wrap(a)
    out = np.logaddexp(0.0, a.data)
    sig = 1.0 / (1.0 + np.exp(-a.data))
    return Tensor(out, parents=((a, lambda g: g * sig),))


# ---------------------------------------------------------------------------
# shape / reduction
# ---------------------------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = wrap(a)
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    old = a.data.shape
    return Tensor(a.data.reshape(shape), parents=((a, lambda g: g.reshape(old)),))


def tsum(a, axis=None) -> Tensor:
    a = wrap(a)
    shape = a.data.shape

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, shape).astype(g.dtype, copy=True)
        gg = np.expand_dims(g, axis)
        return np.broadcast_to(gg, shape).astype(g.dtype, copy=True)

    return Tensor(a.data.sum(axis=axis), parents=((a, vjp),))


def tmean(a, axis=None) -> Tensor:
    a = wrap(a)
    shape = a.data.shape
    count = a.data.size if axis is None else shape[axis]

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g / count, shape).astype(g.dtype, copy=True)
        gg = np.expand_dims(g / count, axis)
        return np.broadcast_to(gg, shape).astype(g.dtype, copy=True)

    return Tensor(a.data.mean(axis=axis), parents=((a, vjp),))


def getitem(a, idx) -> Tensor:
    a = wrap(a)
    shape = a.data.shape

    def vjp(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, idx, g)
        return out

    return Tensor(a.data[idx], parents=((a, vjp),))


def stack(tensors, axis=0) -> Tensor:
    tensors = [wrap(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=axis)

    def make_vjp(i):
        return lambda g: np.take(g, i, axis=axis)

    return Tensor(data, parents=tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


def concat(tensors, axis=0) -> Tensor:
    tensors = [wrap(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in tensors])

    def make_vjp(i):
        sl = [slice(None)] * data.ndim
        sl[axis] = slice(int(offsets[i]), int(offsets[i + 1]))
        sl = tuple(sl)
        return lambda g: g[sl]

    return Tensor(data, parents=tuple((t, make_vjp(i)) for i, t in enumerate(tensors)))


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = wrap(a), wrap(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    out = a.data @ b.data

    def vjp_a(g):
        return _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape)

    def vjp_b(g):
        return _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape)

    return Tensor(out, parents=((a, vjp_a), (b, vjp_b)))


# ---------------------------------------------------------------------------
# structured ops backed by the kernels module
# ---------------------------------------------------------------------------


def conv2d(x, w, b, stride: int = 1, pad: int = 1) -> Tensor:
    """2-D convolution of an (H, W, Cin) input with (k, k, Cin, Cout) weights."""
    x, w, b = wrap(x), wrap(w), wrap(b)
    h, ww_, cin = x.data.shape
    k, _, _, cout = w.data.shape
    xp = np.pad(x.data, ((pad, pad), (pad, pad), (0, 0))) if pad else x.data
    hp, wp = xp.shape[0], xp.shape[1]
    oh = (hp - k) // stride + 1
    ow = (wp - k) // stride + 1
    cols = kernels.im2col(xp, k, stride)
    wmat = w.data.reshape(-1, cout)
    out = (cols @ wmat + b.data).reshape(oh, ow, cout)

    def vjp_x(g):
        gmat = g.reshape(-1, cout)
        gcols = gmat @ wmat.T
        gxp = kernels.col2im(gcols, hp, wp, cin, k, stride)
        if pad:
            return gxp[pad:-pad, pad:-pad, :]
        return gxp

    def vjp_w(g):
        gmat = g.reshape(-1, cout)
        return (cols.T @ gmat).reshape(w.data.shape)

    def vjp_b(g):
        return g.reshape(-1, cout).sum(axis=0)

    return Tensor(out, parents=((x, vjp_x), (w, vjp_w), (b, vjp_b)))


def roi_align(fm, boxes, out_size: int, samples: int = 2) -> Tensor:
    """Differentiable RoI pooling; boxes are (n, 4) in feature coordinates and
    may themselves carry gradients (needed by cascaded refinement)."""
    fm, boxes = wrap(fm), wrap(boxes)
    box_arr = boxes.data.astype(fm.data.dtype, copy=False)
    out = kernels.roi_align(fm.data, box_arr, out_size, samples)
    cache: dict[int, tuple] = {}

    def both(g):
        key = id(g)
        if key not in cache:
            cache.clear()
            cache[key] = kernels.roi_align_grads(fm.data, box_arr, out_size, g, samples)
        return cache[key]

    def vjp_fm(g):
        return both(g)[0]

    def vjp_boxes(g):
        return both(g)[1].astype(boxes.data.dtype, copy=False)

    return Tensor(out, parents=((fm, vjp_fm), (boxes, vjp_boxes)))


def point_sample(fm, y: float, x: float) -> Tensor:
    """Differentiable bilinear lookup of an (H, W, C) map at continuous (y, x)."""
    fm = wrap(fm)
    out = kernels.bilinear_lookup(fm.data, y, x)
    shape = fm.data.shape

    def vjp(g):
        return kernels.bilinear_lookup_grad(shape, y, x, g)

    return Tensor(out, parents=((fm, vjp),))
