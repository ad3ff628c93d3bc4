"""Central finite-difference gradient checks."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, backward, precision


def numeric_grad(fn, arrays, h=1e-5):
    """d fn / d arrays[i] by central differences; ``fn`` maps arrays to a float."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = fn(arrays)
            a[i] = old - h
            fm = fn(arrays)
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise |a - n| / max(|a|, |n|, floor)."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        if a.size == 0:
            continue
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_gradients(build, arrays, h=1e-5):
    """Compare analytic and numeric gradients of ``build(*tensors) -> scalar``.

    Runs in float64. Returns the worst relative error.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with precision(np.float64):
        tensors = [Tensor(a, requires_grad=True) for a in arrays]
        backward(build(*tensors))
        analytic = [t.grad for t in tensors]

        def f(arrs):
            return build(*[Tensor(a) for a in arrs]).item()

        numeric = numeric_grad(f, arrays, h)
    return relative_error(analytic, numeric)


def check_store_gradients(loss_fn, store, h=1e-5, names=None, max_entries=None, rng=None):
    """Gradient check of ``loss_fn()`` with respect to store parameters.

    The store must already hold float64 data. ``max_entries`` samples that
    many coordinates per parameter to bound the cost on large layers.
    """
    store.zero_grad()
    backward(loss_fn())
    worst = 0.0
    rng = rng or np.random.default_rng(0)
    for name in names or store.names():
        t = store[name]
        if t.grad is None:
            raise RuntimeError(f"no gradient reached {name!r}")
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, max_entries, replace=False)
        a = t.grad.reshape(-1)[idx]
        n = np.zeros_like(a)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = loss_fn().item()
            flat[i] = old - h
            fm = loss_fn().item()
            flat[i] = old
            n[j] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error([a], [n]))
    store.zero_grad()
    return worst
