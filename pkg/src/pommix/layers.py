"""Parameter initialization and small layer helpers shared by the models."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import Tensor, matmul


@dataclass
class Ctx:
    """Forward-pass mode: dropout is active only when ``train`` is set."""

    train: bool = False
    rng: np.random.Generator | None = None


EVAL = Ctx(False, None)


def init_linear(store, name, fan_in, fan_out, rng, group, bias=0.0, scale=1.0):
    """Glorot-uniform weight ``name.w`` [in, out] and constant bias ``name.b``."""
    limit = scale * np.sqrt(6.0 / (fan_in + fan_out))
    store.add(f"{name}.w", rng.uniform(-limit, limit, size=(fan_in, fan_out)), group)
    store.add(f"{name}.b", np.full(fan_out, bias), group)


def linear(store, name, x):
    return matmul(x, store[f"{name}.w"]) + store[f"{name}.b"]


def const(x):
    """Wrap an array as a non-differentiable tensor of the current dtype."""
    return x if isinstance(x, Tensor) else Tensor(x)
