"""Dense numpy tensors with reverse-mode differentiation.

Each op returns a new Tensor holding its parents and a closure that maps the
output gradient to parent gradients. ``backward`` walks the graph in reverse
topological order once; a consumed graph cannot be walked again.
"""

from __future__ import annotations

import contextlib

import numpy as np

_DTYPE = [np.float32]
_DEBUG = [False]


def default_dtype():
    return _DTYPE[0]


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the dtype of newly created tensors."""
    old = _DTYPE[0]
    _DTYPE[0] = np.dtype(dtype).type
    try:
        yield
    finally:
        _DTYPE[0] = old


@contextlib.contextmanager
def debug_mode(on=True):
    """Raise FloatingPointError whenever an op produces NaN or Inf."""
    old = _DEBUG[0]
    _DEBUG[0] = on
    try:
        yield
    finally:
        _DEBUG[0] = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype or _DTYPE[0])
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)
    size = property(lambda self: self.data.size)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op})"

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    # operators
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, fn, op):
    out = Tensor(data, dtype=data.dtype if isinstance(data, np.ndarray) else None)
    if _DEBUG[0] and not np.all(np.isfinite(out.data)):
        raise FloatingPointError(f"non-finite values produced by {op}")
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = fn
    out._op = op
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def _check_broadcast(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _mask_array(mask):
    return mask.data if isinstance(mask, Tensor) else np.asarray(mask)


# ------------------------------------------------------------ elementwise


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def sqrt(x):
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,), "sqrt")


def exp(x):
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,), "exp")


def log(x):
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(x):
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0).astype(x.data.dtype), (x,),
                 lambda g: (g * pos,), "relu")


def leaky_relu(x, slope=0.2):
    pos = x.data > 0
    scale = np.where(pos, 1.0, slope).astype(x.data.dtype)
    return _make(x.data * scale, (x,), lambda g: (g * scale,), "leaky_relu")


def hardtanh(x, lo=-1.0, hi=1.0):
    inside = (x.data > lo) & (x.data < hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,), "hardtanh")


def dropout(x, p, train, rng):
    """Inverted dropout; the sampled mask is reused by the backward pass."""
    if not train or p == 0:
        return x
    keep = (rng.random(x.shape) >= p).astype(x.data.dtype) / (1.0 - p)
    return _make(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


# ------------------------------------------------------------- structural


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ValueError(f"matmul: incompatible shapes {a.shape} and {b.shape}") from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), back, "matmul")


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ValueError(f"concat: incompatible shapes {ref} and {t.shape}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]
    return _make(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors),
                 lambda g: tuple(np.split(g, cuts, axis=ax)), "concat")


def split(x, sizes, axis=-1):
    """Split into consecutive chunks of the given sizes."""
    out, start = [], 0
    ax = axis % x.ndim
    for n in sizes:
        key = [slice(None)] * x.ndim
        key[ax] = slice(start, start + n)
        out.append(getitem(x, tuple(key)))
        start += n
    if start != x.shape[ax]:
        raise ValueError(f"split: sizes {list(sizes)} do not cover axis of length {x.shape[ax]}")
    return out


def getitem(x, key):
    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, key, g)
        return (full,)

    return _make(x.data[key], (x,), back, "getitem")


def take(x, index, axis=0):
    """Gather slices along ``axis``; repeated indices accumulate gradient."""
    index = np.asarray(index)
    if index.size and (index.min() < -x.shape[axis] or index.max() >= x.shape[axis]):
        raise IndexError(f"take: index out of range for axis of length {x.shape[axis]}")
    ax = axis % x.ndim

    def back(g):
        full = np.zeros_like(x.data)
        moved = np.moveaxis(full, ax, 0)
        gm = np.moveaxis(g, list(range(ax, ax + index.ndim)), list(range(index.ndim)))
        np.add.at(moved, index, gm)
        return (full,)

    return _make(np.take(x.data, index, axis=ax), (x,), back, "take")


def reshape(x, shape):
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {x.shape} as {tuple(shape)}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes=None):
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = np.argsort(axes)
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),), "transpose")


def tsum(x, axis=None, keepdims=False):
    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), back, "sum")


def tmean(x, axis=None, keepdims=False):
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(tsum(x, axis, keepdims), 1.0 / n)


# ------------------------------------------------------ masked reductions


def _mask_for(x, mask, op):
    m = _mask_array(mask).astype(x.data.dtype)
    try:
        np.broadcast_shapes(m.shape, x.shape)
    except ValueError:
        raise ValueError(f"{op}: mask shape {m.shape} incompatible with {x.shape}") from None
    return np.broadcast_to(m, x.shape)


def _count(m, axis, keepdims):
    c = m.sum(axis=axis, keepdims=keepdims)
    if np.any(c == 0):
        raise ValueError("masked reduction over an empty set")
    return c


def masked_mean(x, mask, axis, keepdims=False):
    m = _mask_for(x, mask, "masked_mean")
    c = _count(m, axis, True)
    out = np.where(m > 0, x.data, 0).sum(axis=axis, keepdims=True) / c

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * m / c,)

    return _make(out if keepdims else np.squeeze(out, axis), (x,), back, "masked_mean")


STD_EPS = 1e-5


def masked_std(x, mask, axis, keepdims=False, eps=STD_EPS):
    """Population standard deviation, sqrt(var + eps)."""
    m = _mask_for(x, mask, "masked_std")
    c = _count(m, axis, True)
    xm = np.where(m > 0, x.data, 0)
    mu = xm.sum(axis=axis, keepdims=True) / c
    d = (xm - mu) * m
    var = (d * d).sum(axis=axis, keepdims=True) / c
    out = np.sqrt(var + eps)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * d / (c * out),)

    return _make(out if keepdims else np.squeeze(out, axis), (x,), back, "masked_std")


def _masked_extreme(x, mask, axis, keepdims, largest):
    op = "masked_max" if largest else "masked_min"
    m = _mask_for(x, mask, op)
    _count(m, axis, True)
    fill = -np.inf if largest else np.inf
    vals = np.where(m > 0, x.data, fill)
    idx = np.argmax(vals, axis=axis) if largest else np.argmin(vals, axis=axis)
    idx = np.expand_dims(idx, axis)
    out = np.take_along_axis(vals, idx, axis=axis).astype(x.data.dtype)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(x.data)
        np.put_along_axis(full, idx, g, axis=axis)
        return (full,)

    return _make(out if keepdims else np.squeeze(out, axis), (x,), back, op)


def masked_max(x, mask, axis, keepdims=False):
    """Masked maximum; ties send the gradient to the first index."""
    return _masked_extreme(x, mask, axis, keepdims, True)


def masked_min(x, mask, axis, keepdims=False):
    return _masked_extreme(x, mask, axis, keepdims, False)


def masked_softmax(x, mask, axis=-1):
    """Softmax over unmasked entries; masked entries get weight and gradient 0.

    A row with no unmasked entry yields all zeros.
    """
    m = _mask_for(x, mask, "masked_softmax") > 0
    z = np.where(m, x.data, -np.inf)
    top = z.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0)
    e = np.where(m, np.exp(z - top), 0)
    s = e.sum(axis=axis, keepdims=True)
    out = (e / np.where(s > 0, s, 1)).astype(x.data.dtype)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back, "masked_softmax")


# ---------------------------------------------------------- vector helpers


def l2_normalize(x, axis=-1):
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("l2_normalize: zero-norm vector")
    out = x.data / norm

    def back(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return _make(out, (x,), back, "l2_normalize")


def cosine_similarity(a, b, axis=-1):
    """Cosine of the angle between ``a`` and ``b``; zero vectors are an error."""
    _check_broadcast("cosine_similarity", a, b)
    return tsum(mul(l2_normalize(a, axis), l2_normalize(b, axis)), axis=axis)


# ------------------------------------------------------------------ losses


def bce_with_logits(logits, targets, mask=None):
    """Mean binary cross-entropy from logits over (optionally masked) entries."""
    y = np.asarray(targets, dtype=logits.data.dtype)
    if y.shape != logits.shape:
        raise ValueError(f"bce_with_logits: incompatible shapes {logits.shape} and {y.shape}")
    w = np.ones_like(y) if mask is None else np.broadcast_to(_mask_array(mask), y.shape).astype(y.dtype)
    n = w.sum()
    if n == 0:
        raise ValueError("bce_with_logits: no unmasked targets")
    x = logits.data
    loss = np.maximum(x, 0) - x * y + np.log1p(np.exp(-np.abs(x)))
    out = np.asarray((loss * w).sum() / n, dtype=x.dtype)
    prob = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _make(out, (logits,), lambda g: (g * w * (prob - y) / n,), "bce_with_logits")


def mae(pred, target):
    """Mean absolute error; the subgradient at zero residual is 0."""
    t = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.data.dtype)
    if t.shape != pred.shape:
        raise ValueError(f"mae: incompatible shapes {pred.shape} and {t.shape}")
    r = pred.data - t
    out = np.asarray(np.abs(r).mean(), dtype=pred.data.dtype)
    return _make(out, (pred,), lambda g: (g * np.sign(r) / r.size,), "mae")


def mse(pred, target):
    t = np.asarray(target, dtype=pred.data.dtype)
    r = pred.data - t
    out = np.asarray((r * r).mean(), dtype=pred.data.dtype)
    return _make(out, (pred,), lambda g: (g * 2 * r / r.size,), "mse")


# ---------------------------------------------------------------- backward


def backward(loss):
    """Populate ``.grad`` on every leaf that requires it.

    Raises if the graph was already consumed or a leaf still carries a
    gradient from an earlier pass (call ``zero_grad`` first).
    """
    if loss.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        if node._consumed:
            raise RuntimeError("backward through a graph that was already consumed")
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    for node in order:
        if node._backward is None and node.requires_grad and node.grad is not None:
            raise RuntimeError("gradient already populated; reset gradients before backward")

    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if g is not None else np.zeros_like(node.data)
            continue
        if g is None:
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=p.data.dtype).reshape(p.shape)
            if id(p) in grads:
                grads[id(p)] = grads[id(p)] + pg
            else:
                grads[id(p)] = pg
    loss._consumed = True
    for node in order:
        if node._backward is not None:
            node._consumed = True
            node._backward = None
