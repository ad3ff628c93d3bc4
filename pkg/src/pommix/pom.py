"""Principal odor map: a GraphNets-style GNN producing 196-d molecule embeddings.

Each block updates edges (FiLM-modulated messages), then nodes (attention
over self, the global vertex and incoming edges), then the global state
(PNA readout followed by a two-layer MLP). The final global state is the
embedding.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .engine import (
    ParamStore, concat, dropout, leaky_relu, masked_max, masked_mean, masked_min,
    masked_softmax, masked_std, matmul, relu, reshape, sigmoid, split, take,
)
from .featurize import EDGE_DIM, N_DESCRIPTORS, NODE_DIM, collate
from .layers import EVAL, const, init_linear, linear

GROUP = "pom"


@dataclass
class PomConfig:
    num_layers: int = 4
    hidden: int = 320
    embedding_dim: int = 196
    dropout: float = 0.1
    lr: float = 1e-4
    node_attention_layers: int = 1
    edge_film_layers: int = 1
    global_pna_layers: int = 2
    residual: bool = True
    attention_slope: float = 0.2

    def __post_init__(self):
        if min(self.num_layers, self.hidden, self.embedding_dim) <= 0:
            raise ValueError("PomConfig dimensions must be positive")
        if (self.node_attention_layers, self.edge_film_layers, self.global_pna_layers) != (1, 1, 2):
            raise ValueError("only 1 attention, 1 FiLM and 2 PNA-MLP layers per block are wired")

    def to_json(self):
        d = asdict(self)
        d["wiring"] = ("blocks: edge(FiLM on [e|src|dst], cond [dst|u]) -> "
                       "node(GATv2 over self, global, incoming edges; residual) -> "
                       "global(PNA mean/std/min/max + u, 2-layer MLP; residual except last)")
        return d

    @classmethod
    def from_json(cls, d):
        d = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**d)


def init_pom(config: PomConfig, seed: int, num_labels: int | None = None) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    h = config.hidden
    init_linear(store, "pom.enc_node", NODE_DIM, h, rng, GROUP)
    init_linear(store, "pom.enc_edge", EDGE_DIM, h, rng, GROUP)
    init_linear(store, "pom.enc_global", N_DESCRIPTORS, h, rng, GROUP)
    for i in range(config.num_layers):
        p = f"pom.block{i}"
        init_linear(store, f"{p}.edge.msg", 3 * h, h, rng, GROUP)
        init_linear(store, f"{p}.edge.film", 2 * h, 2 * h, rng, GROUP, scale=0.1)
        # gamma half of the FiLM bias starts at 1, beta half at 0
        store[f"{p}.edge.film.b"].data[:h] = 1.0
        init_linear(store, f"{p}.node.query", h, h, rng, GROUP)
        init_linear(store, f"{p}.node.value", h, h, rng, GROUP)
        store.add(f"{p}.node.edge_value.w", rng.uniform(-1, 1, (h, h)) * np.sqrt(3.0 / h), GROUP)
        store.add(f"{p}.node.score", rng.uniform(-1, 1, (h, 1)) * np.sqrt(3.0 / h), GROUP)
        init_linear(store, f"{p}.node.out", h, h, rng, GROUP)
        out = config.embedding_dim if i == config.num_layers - 1 else h
        init_linear(store, f"{p}.global.mlp0", 5 * h, h, rng, GROUP)
        init_linear(store, f"{p}.global.mlp1", h, out, rng, GROUP)
    if num_labels:
        init_glm(store, config, num_labels, rng)
    return store


def init_glm(store, config, num_labels, rng):
    init_linear(store, "glm", config.embedding_dim, num_labels, rng, "glm")


# ------------------------------------------------------------------ layers


def film_edge_update(store, prefix, e, h, u, batch, ctx=EVAL, dropout_p=0.0):
    """FiLM message: ReLU(gamma * W[e|src|dst] + beta), (gamma, beta) = V[dst|u]."""
    src = take(h, batch.senders, axis=0)
    dst = take(h, batch.receivers, axis=0)
    msg = linear(store, f"{prefix}.msg", concat([e, src, dst], axis=-1))
    cond = concat([dst, take(u, batch.node_graph[batch.receivers], axis=0)], axis=-1)
    gamma, beta = split(linear(store, f"{prefix}.film", cond), [msg.shape[-1]] * 2, axis=-1)
    return dropout(relu(gamma * msg + beta), dropout_p, ctx.train, ctx.rng)


def attention_weights(store, prefix, h, e, u, batch, slope=0.2):
    """Per-node attention over padded neighbour slots.

    Returns (weights [N, K], slot values [N, K, H]).
    """
    wv = store[f"{prefix}.value.w"]
    bv = store[f"{prefix}.value.b"]
    node_v = matmul(h, wv) + bv
    glob_v = matmul(u, wv) + bv
    edge_v = take(node_v, batch.senders, axis=0) + matmul(e, store[f"{prefix}.edge_value.w"])
    table = concat([node_v, glob_v, edge_v], axis=0)
    vals = take(table, batch.slots, axis=0)
    q = linear(store, f"{prefix}.query", h)
    n, k = batch.slots.shape
    act = leaky_relu(vals + reshape(q, (n, 1, -1)), slope)
    scores = reshape(matmul(act, store[f"{prefix}.score"]), (n, k))
    return masked_softmax(scores, batch.slot_mask, axis=-1), vals


def gat_node_update(store, prefix, h, e, u, batch, ctx=EVAL, dropout_p=0.0, slope=0.2):
    """Attention-weighted sum of slot values, then linear + ReLU."""
    alpha, vals = attention_weights(store, prefix, h, e, u, batch, slope)
    n, k = alpha.shape
    agg = reshape(matmul(reshape(alpha, (n, 1, k)), vals), (n, -1))
    return dropout(relu(linear(store, f"{prefix}.out", agg)), dropout_p, ctx.train, ctx.rng)


def pna_readout(x, mask, axis):
    """Concatenated masked mean, std, min and max."""
    return concat([masked_mean(x, mask, axis), masked_std(x, mask, axis),
                   masked_min(x, mask, axis), masked_max(x, mask, axis)], axis=-1)


def pna_global_update(store, prefix, u, h, batch, ctx=EVAL, dropout_p=0.0):
    """Two-layer MLP on [PNA(nodes) | u]."""
    if batch.node_pad.size == 0:
        raise ValueError("PNA over an empty graph")
    padded = take(h, batch.node_pad, axis=0)
    agg = pna_readout(padded, batch.node_pad_mask[..., None], axis=1)
    z = relu(linear(store, f"{prefix}.mlp0", concat([agg, u], axis=-1)))
    z = dropout(z, dropout_p, ctx.train, ctx.rng)
    return linear(store, f"{prefix}.mlp1", z)


# ------------------------------------------------------------------- model


def pom_forward(store, batch, config: PomConfig, ctx=EVAL):
    """Embeddings [B, embedding_dim] for a collated GraphBatch."""
    p = config.dropout
    h = linear(store, "pom.enc_node", const(batch.node_features))
    e = linear(store, "pom.enc_edge", const(batch.edge_features))
    u = linear(store, "pom.enc_global", const(batch.global_features))
    last = config.num_layers - 1
    for i in range(config.num_layers):
        b = f"pom.block{i}"
        e = film_edge_update(store, f"{b}.edge", e, h, u, batch, ctx, p)
        dh = gat_node_update(store, f"{b}.node", h, e, u, batch, ctx, p, config.attention_slope)
        h = h + dh if config.residual else dh
        du = pna_global_update(store, f"{b}.global", u, h, batch, ctx, p)
        u = u + du if (config.residual and i < last) else du
    return u


def glm_logits(store, emb):
    return linear(store, "glm", emb)


def glm_predict(store, emb):
    """Per-label probabilities."""
    return sigmoid(glm_logits(store, emb)).data


def embed_molecules(store, config, graphs, ctx=EVAL, chunk=256):
    """Embeddings for a list of GraphTensors as one tensor, in fixed chunks.

    The chunking only depends on the list, so repeated calls on the same
    molecules give bitwise-identical results.
    """
    parts = [pom_forward(store, collate(graphs[i:i + chunk]), config, ctx)
             for i in range(0, len(graphs), chunk)]
    return parts[0] if len(parts) == 1 else concat(parts, axis=0)
