"""Named parameters, Adam and on-disk checkpoints."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensor import Tensor, default_dtype


@dataclass
class Param:
    tensor: Tensor
    group: str = "default"
    trainable: bool = True
    m: np.ndarray | None = None
    v: np.ndarray | None = None
    t: int = 0


@dataclass
class ParamStore:
    """Ordered name -> parameter map with optimizer state and post-step hooks."""

    params: dict = field(default_factory=dict)
    hooks: list = field(default_factory=list)

    def add(self, name, value, group="default", trainable=True):
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=default_dtype()), requires_grad=trainable)
        self.params[name] = Param(t, group, trainable)
        return t

    def __getitem__(self, name):
        return self.params[name].tensor

    def __contains__(self, name):
        return name in self.params

    def __len__(self):
        return len(self.params)

    def names(self):
        return list(self.params)

    def items(self):
        return [(k, p.tensor) for k, p in self.params.items()]

    def group_of(self, name):
        return self.params[name].group

    def set_trainable(self, pattern_or_group, flag):
        """Toggle trainability for every parameter of a group."""
        for p in self.params.values():
            if p.group == pattern_or_group:
                p.trainable = flag
                p.tensor.requires_grad = flag

    def zero_grad(self):
        for p in self.params.values():
            p.tensor.grad = None

    def reset_state(self):
        for p in self.params.values():
            p.m = p.v = None
            p.t = 0

    def snapshot(self):
        """Copies of all parameter values, in order."""
        return {k: p.tensor.data.copy() for k, p in self.params.items()}

    def restore(self, snap):
        for k, arr in snap.items():
            self.params[k].tensor.data[...] = arr

    def num_values(self):
        return sum(p.tensor.size for p in self.params.values())

    def astype(self, dtype):
        """Cast every parameter in place (used for float64 gradient checks)."""
        for p in self.params.values():
            p.tensor.data = p.tensor.data.astype(dtype)
        return self

    def merged(self, other):
        """A store holding the parameters of both (sharing tensors)."""
        out = ParamStore(dict(self.params), list(self.hooks))
        for k, p in other.params.items():
            if k in out.params:
                raise KeyError(f"duplicate parameter {k!r}")
            out.params[k] = p
        out.hooks.extend(h for h in other.hooks if h not in out.hooks)
        return out


def adam_step(store, lr_by_group, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update with bias correction, then the store's hooks.

    Groups with learning rate 0 are left untouched, moments included.
    """
    for name, p in store.params.items():
        if not p.trainable:
            continue
        if p.group not in lr_by_group:
            raise KeyError(f"no learning rate for group {p.group!r} ({name})")
        lr = lr_by_group[p.group]
        if lr == 0:
            continue
        g = p.tensor.grad
        if g is None:
            raise RuntimeError(f"missing gradient for trainable parameter {name!r}")
        if p.m is None:
            p.m = np.zeros_like(p.tensor.data)
            p.v = np.zeros_like(p.tensor.data)
        p.t += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        mhat = p.m / (1 - beta1 ** p.t)
        vhat = p.v / (1 - beta2 ** p.t)
        p.tensor.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.tensor.data.dtype)
    for hook in store.hooks:
        hook(store)


def save_checkpoint(store, directory, meta=None):
    """Write manifest.json and params.bin (little-endian float32)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    with open(directory / "params.bin", "wb") as fh:
        for name, p in store.params.items():
            arr = np.ascontiguousarray(p.tensor.data, dtype="<f4")
            fh.write(arr.tobytes())
            entries.append({"name": name, "shape": list(arr.shape), "group": p.group,
                            "trainable": p.trainable})
    manifest = {"format": "pommix-checkpoint-1", "params": entries, "meta": meta or {}}
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    os.replace(tmp, directory / "manifest.json")


def load_checkpoint(directory):
    """Return (ParamStore, meta)."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        blob = np.fromfile(directory / "params.bin", dtype="<f4")
    except FileNotFoundError as e:
        raise FileNotFoundError(f"not a checkpoint directory: {directory} ({e.filename})") from None
    store, off = ParamStore(), 0
    for e in manifest["params"]:
        n = int(np.prod(e["shape"], dtype=np.int64))
        if off + n > blob.size:
            raise ValueError(f"{directory}: params.bin shorter than manifest")
        store.add(e["name"], blob[off:off + n].reshape(e["shape"]), e["group"], e["trainable"])
        off += n
    if off != blob.size:
        raise ValueError(f"{directory}: params.bin longer than manifest")
    return store, manifest.get("meta", {})
