"""Mixture encoder: molecule-wise self-attention, set aggregation and distance heads.

Molecule embeddings of a batch of mixtures are padded to the largest mixture
and carried with a 0/1 mask. Every operation here treats masked rows as
absent, so results do not depend on the padding length or on molecule order.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .engine import (
    Tensor, concat, dropout, hardtanh, l2_normalize, mae, masked_max, masked_mean,
    masked_min, masked_softmax, masked_std, matmul, mse, relu, reshape, sigmoid, take,
    transpose, tsum,
)
from .layers import EVAL, init_linear, linear

GROUP = "chemix"
ATTENTION_KINDS = ("softmax", "sigmoidal")
AGGREGATIONS = ("mean", "pna", "attention")
HEAD_KINDS = ("scaled_cosine", "cosine", "mean_linear", "concat_linear", "pna_linear")
ACTIVATIONS = ("hardtanh", "sigmoid")
SYMMETRIC_HEADS = ("scaled_cosine", "cosine", "mean_linear", "pna_linear")
MIN_SLOPE = 1e-3


@dataclass
class ChemixConfig:
    embed_dim: int = 96
    attention_layers: int = 1
    heads: int = 8
    attention_kind: str = "sigmoidal"
    aggregation: str = "pna"
    head_kind: str = "scaled_cosine"
    mlp_head: bool = False
    activation: str = "hardtanh"
    dropout: float = 0.1
    lr: float = 8e-5
    loss: str = "mae"
    input_dim: int = 196
    zero_bias: bool = False

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by {self.heads} heads")
        for value, allowed, what in [(self.attention_kind, ATTENTION_KINDS, "attention_kind"),
                                     (self.aggregation, AGGREGATIONS, "aggregation"),
                                     (self.head_kind, HEAD_KINDS, "head_kind"),
                                     (self.activation, ACTIVATIONS, "activation"),
                                     (self.loss, ("mae", "mse"), "loss")]:
            if value not in allowed:
                raise ValueError(f"{what} must be one of {allowed}, got {value!r}")
        if self.attention_layers < 0:
            raise ValueError("attention_layers must be >= 0")

    def to_json(self):
        d = asdict(self)
        d["cosine_distance"] = "1 - cos"
        return d

    @classmethod
    def from_json(cls, d):
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


@dataclass
class MixtureBatch:
    """Padded molecule embeddings [B, M, D] with a [B, M] mask."""

    embeddings: Tensor
    mask: np.ndarray
    sizes: np.ndarray

    @property
    def shape(self):
        return self.embeddings.shape


def gather_mixtures(mol_emb, members, pad_to=None):
    """Batch mixtures given as lists of row indices into ``mol_emb`` [U, D]."""
    mol_emb = mol_emb if isinstance(mol_emb, Tensor) else Tensor(mol_emb)
    sizes = np.array([len(m) for m in members], dtype=np.int64)
    if len(sizes) == 0:
        raise ValueError("no mixtures to batch")
    if sizes.min() == 0:
        raise ValueError(f"empty mixture at batch index {int(np.argmin(sizes))}")
    width = int(sizes.max()) if pad_to is None else int(pad_to)
    if width < sizes.max():
        raise ValueError(f"pad_to={width} is smaller than the largest mixture ({sizes.max()})")
    index = np.zeros((len(members), width), dtype=np.int64)
    mask = np.zeros((len(members), width), dtype=mol_emb.data.dtype)
    for i, m in enumerate(members):
        index[i, :len(m)] = m
        mask[i, :len(m)] = 1
    emb = take(mol_emb, index, axis=0) * Tensor(mask[..., None])
    return MixtureBatch(emb, mask, sizes)


def pad_mixtures(arrays, pad_to=None):
    """Batch a list of [n_i, D] arrays."""
    flat = np.concatenate([np.asarray(a) for a in arrays], axis=0)
    offsets = np.cumsum([0] + [len(a) for a in arrays])
    members = [list(range(offsets[i], offsets[i + 1])) for i in range(len(arrays))]
    return gather_mixtures(flat, members, pad_to)


# ------------------------------------------------------------------ params


def clamp_slope(store):
    """Post-step hook keeping the head slope positive."""
    if "chemix.head.m" in store:
        d = store["chemix.head.m"].data
        np.maximum(d, MIN_SLOPE, out=d)


def attach_hooks(store):
    if clamp_slope not in store.hooks:
        store.hooks.append(clamp_slope)
    return store


def init_chemix(config: ChemixConfig, seed: int, store=None):
    """Add CheMix parameters (group ``chemix``) to ``store`` or a new one."""
    from .engine import ParamStore

    store = ParamStore() if store is None else store
    rng = np.random.default_rng(seed)
    d = config.embed_dim
    init_linear(store, "chemix.proj", config.input_dim, d, rng, GROUP)
    for i in range(config.attention_layers):
        p = f"chemix.attn{i}"
        for part in ("query", "key", "value", "out"):
            init_linear(store, f"{p}.{part}", d, d, rng, GROUP)
    if config.aggregation == "pna":
        init_linear(store, "chemix.agg.pna", 4 * d, d, rng, GROUP)
    elif config.aggregation == "attention":
        store.add("chemix.agg.query", rng.normal(0, 1 / np.sqrt(d), d), GROUP)
    if config.mlp_head:
        init_linear(store, "chemix.mlp0", d, d, rng, GROUP)
        init_linear(store, "chemix.mlp1", d, d, rng, GROUP)
    kind = config.head_kind
    if kind == "scaled_cosine":
        store.add("chemix.head.m", np.array(1.0), GROUP)
        store.add("chemix.head.b", np.array(0.0 if config.zero_bias else 0.5), GROUP,
                  trainable=not config.zero_bias)
    elif kind != "cosine":
        fan = {"mean_linear": d, "concat_linear": 2 * d, "pna_linear": 4 * d}[kind]
        init_linear(store, "chemix.head", fan, 1, rng, GROUP, bias=0.5)
    return attach_hooks(store)


# ------------------------------------------------------------------- layers


def _heads(x, n_heads):
    b, m, d = x.shape
    return transpose(reshape(x, (b, m, n_heads, d // n_heads)), (0, 2, 1, 3))


def attention_logits(store, prefix, x, n_heads):
    """Scaled dot-product logits [B, H, M, M] and per-head values [B, H, M, d]."""
    q = _heads(linear(store, f"{prefix}.query", x), n_heads)
    k = _heads(linear(store, f"{prefix}.key", x), n_heads)
    v = _heads(linear(store, f"{prefix}.value", x), n_heads)
    scale = 1.0 / np.sqrt(q.shape[-1])
    return matmul(q, transpose(k, (0, 1, 3, 2))) * scale, v


def attention_layer(store, prefix, x, mask, config, ctx=EVAL):
    """One residual multi-head self-attention layer over molecules.

    Returns the updated [B, M, D] tensor and the weights [B, H, M, M].
    """
    logits, v = attention_logits(store, prefix, x, config.heads)
    keys = mask[:, None, None, :]
    if config.attention_kind == "softmax":
        w = masked_softmax(logits, np.broadcast_to(keys, logits.shape), axis=-1)
    else:
        # unnormalized: each key contributes independently
        w = sigmoid(logits) * Tensor(np.broadcast_to(keys, logits.shape).copy())
        v = relu(v)
    b, h, m, dh = v.shape
    mixed = reshape(transpose(matmul(w, v), (0, 2, 1, 3)), (b, m, h * dh))
    out = dropout(linear(store, f"{prefix}.out", mixed), config.dropout, ctx.train, ctx.rng)
    return (x + out) * Tensor(mask[..., None]), w


def _check_mask(mask):
    counts = np.asarray(mask).sum(axis=1)
    if np.any(counts == 0):
        raise ValueError(f"all-masked mixture at batch index {int(np.argmin(counts))}")


def mixture_self_attention(store, config, batch, ctx=EVAL):
    """Project to embed_dim and apply the attention stack.

    Returns (embeddings [B, M, D], list of per-layer weights).
    """
    _check_mask(batch.mask)
    qmask = Tensor(batch.mask[..., None])
    x = linear(store, "chemix.proj", batch.embeddings) * qmask
    weights = []
    for i in range(config.attention_layers):
        x, w = attention_layer(store, f"chemix.attn{i}", x, batch.mask, config, ctx)
        weights.append(w)
    return x, weights


def aggregate_mixture(store, config, x, mask):
    """Masked set pooling to [B, D]."""
    _check_mask(mask)
    m = mask[..., None]
    kind = config.aggregation
    if kind == "mean":
        return masked_mean(x, m, axis=1)
    if kind == "pna":
        agg = concat([masked_mean(x, m, 1), masked_std(x, m, 1),
                      masked_min(x, m, 1), masked_max(x, m, 1)], axis=-1)
        return linear(store, "chemix.agg.pna", agg)
    q = store["chemix.agg.query"]
    scores = tsum(x * q, axis=-1) * (1.0 / np.sqrt(x.shape[-1]))
    alpha = masked_softmax(scores, mask, axis=-1)
    return tsum(x * reshape(alpha, alpha.shape + (1,)), axis=1)


def embed_mixtures(store, config, batch, ctx=EVAL):
    """Mixture embeddings [B, D]."""
    x, _ = mixture_self_attention(store, config, batch, ctx)
    z = aggregate_mixture(store, config, x, batch.mask)
    if config.mlp_head:
        z = linear(store, "chemix.mlp1", relu(linear(store, "chemix.mlp0", z)))
    return z


def _activate(config, x):
    return hardtanh(x, 0.0, 1.0) if config.activation == "hardtanh" else sigmoid(x)


def cosine_distance(a, b):
    """1 - cos(a, b) as half the squared distance between unit vectors.

    The two forms agree for unit vectors; this one is exactly symmetric and
    exactly 0 for identical inputs. Zero-norm inputs raise.
    """
    diff = l2_normalize(a) - l2_normalize(b)
    return tsum(diff * diff, axis=-1) * 0.5


def predict_distance(store, config, za, zb):
    """Predicted perceptual distances [P] for paired mixture embeddings."""
    if za.shape != zb.shape:
        raise ValueError(f"embedding shapes differ: {za.shape} vs {zb.shape}")
    kind = config.head_kind
    if kind == "scaled_cosine":
        d = cosine_distance(za, zb)
        return _activate(config, d * store["chemix.head.m"] + store["chemix.head.b"])
    if kind == "cosine":
        return hardtanh(cosine_distance(za, zb), 0.0, 1.0)
    if kind == "mean_linear":
        feats = (za + zb) * 0.5
    elif kind == "concat_linear":
        feats = concat([za, zb], axis=-1)
    else:
        pair = concat([reshape(za, (-1, 1, za.shape[-1])), reshape(zb, (-1, 1, zb.shape[-1]))], axis=1)
        ones = np.ones((pair.shape[0], 2, 1))
        feats = concat([masked_mean(pair, ones, 1), masked_std(pair, ones, 1),
                        masked_min(pair, ones, 1), masked_max(pair, ones, 1)], axis=-1)
    return _activate(config, reshape(linear(store, "chemix.head", feats), (-1,)))


def chemix_forward(store, config, mol_emb, mixtures, pairs, ctx=EVAL, pad_to=None):
    """Predictions for ``pairs`` [P, 2] of indices into ``mixtures``.

    Each mixture (a list of rows of ``mol_emb``) is embedded once.
    """
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    z = embed_mixtures(store, config, gather_mixtures(mol_emb, mixtures, pad_to), ctx)
    return predict_distance(store, config, take(z, pairs[:, 0], 0), take(z, pairs[:, 1], 0))


def loss_fn(config, pred, target):
    return mae(pred, target) if config.loss == "mae" else mse(pred, target)


# ------------------------------------------------------------ interpretation


def attention_map(store, config, mol_emb, layer=-1):
    """Head-averaged attention weights [n, n] for one mixture's molecules."""
    if config.attention_layers == 0:
        raise ValueError("model has no attention layers")
    batch = pad_mixtures([np.asarray(mol_emb)])
    _, weights = mixture_self_attention(store, config, batch)
    return weights[layer].data[0].mean(axis=0)


def export_attention_maps(store, config, mol_emb, mixtures, ids, smiles):
    """JSON-ready records {mixture_id, smiles, weights} for each mixture."""
    out = []
    for mid, members in zip(ids, mixtures):
        w = attention_map(store, config, np.asarray(mol_emb)[members])
        out.append({"mixture_id": mid, "smiles": [smiles[i] for i in members],
                    "weights": w.astype(float).round(6).tolist()})
    return out
