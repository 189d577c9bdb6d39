"""Entity encoder: subgraph tokens -> one D_A-dimensional representation per entity.

Token layout per sequence is (anchors, neighbors, center). Position carries
no meaning; the role of each slot is given by its type embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import StarGraphError
from .layers import init_block, init_mlp, linear_params, mlp, self_attention_block
from .tensor import Parameter, Tensor
from .vocab import PAD, Vocabulary

ANCHOR, NEIGHBOR, CENTER = 0, 1, 2


@dataclass(frozen=True)
class EncoderConfig:
    d_a: int = 256
    d_n: int = 32
    k_anchors: int = 20
    m_neighbors: int = 5
    use_neighbors: bool = True
    use_center: bool = True
    encoder: str = "attention"
    heads: int = 4
    ffn_mult: int = 4
    dropout: float = 0.05

    def __post_init__(self):
        if self.encoder not in ("attention", "mlp"):
            raise StarGraphError(f"unknown encoder {self.encoder!r} (expected attention|mlp)")
        if self.k_anchors < 1:
            raise StarGraphError("k_anchors must be >= 1")
        if self.encoder == "attention" and self.d_a % self.heads:
            raise StarGraphError(f"d_a={self.d_a} not divisible by heads={self.heads}")

    @property
    def m(self) -> int:
        return self.m_neighbors if self.use_neighbors else 0

    @property
    def num_center(self) -> int:
        return 1 if self.use_center else 0

    @property
    def seq_len(self) -> int:
        return self.k_anchors + self.m + self.num_center

    @property
    def uses_nodes(self) -> bool:
        return self.m > 0 or self.use_center

    @property
    def token_types(self) -> np.ndarray:
        return np.array(
            [ANCHOR] * self.k_anchors + [NEIGHBOR] * self.m + [CENTER] * self.num_center, dtype=np.int64
        )


@dataclass(frozen=True)
class SubgraphBatch:
    entities: np.ndarray  # [B]
    anchors: np.ndarray  # [B, k] anchor ordinals or PAD
    neighbors: np.ndarray  # [B, m] entity ids or PAD
    center: np.ndarray  # [B, 0 or 1]

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([self.neighbors, self.center], axis=1)

    @property
    def mask(self) -> np.ndarray:
        """True at real tokens, ``[B, L]``."""
        return np.concatenate([self.anchors != PAD, self.nodes != PAD], axis=1)

    @property
    def pad_mask(self) -> np.ndarray:
        return ~self.mask

    def __len__(self) -> int:
        return len(self.entities)


def assemble(vocab: Vocabulary, entity_ids, config: EncoderConfig) -> SubgraphBatch:
    """Look up the precomputed token sets of ``entity_ids``.

    The config may ask for fewer anchor/neighbor slots than the vocabulary
    holds; since slots are stored in sampling order, a prefix is exactly the
    smaller sample.
    """
    ids = np.asarray(entity_ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= vocab.num_entities):
        raise StarGraphError(f"entity id out of range [0, {vocab.num_entities})")
    k, m = config.k_anchors, config.m
    if k > vocab.k or m > vocab.m:
        raise StarGraphError(f"config wants k={k}, m={m} but vocabulary has k={vocab.k}, m={vocab.m}")
    return SubgraphBatch(
        ids,
        vocab.anchor_tokens[ids, :k],
        vocab.neighbor_tokens[ids, :m],
        ids[:, None] if config.use_center else np.zeros((len(ids), 0), dtype=np.int64),
    )


def init_encoder(
    rng: np.random.Generator,
    config: EncoderConfig,
    num_entities: int,
    num_anchors: int,
    init_range: float = 6.0,
    dtype=np.float32,
) -> dict[str, Parameter]:
    """Embeddings uniform in +-init_range/D; linear layers Kaiming-uniform."""
    d_a, d_n = config.d_a, config.d_n

    def table(rows, d, name):
        bound = init_range / d
        return Parameter(rng.uniform(-bound, bound, size=(rows, d)).astype(dtype), name)

    params = {"anchor_table": table(num_anchors, d_a, "anchor_table")}
    if config.uses_nodes:
        params["node_table"] = table(num_entities, d_n, "node_table")
        params.update(linear_params(rng, d_n, d_a, "projection", dtype))
    params["type_embeddings"] = table(3, d_a, "type_embeddings")
    if config.encoder == "attention":
        params.update(init_block(rng, d_a, config.ffn_mult * d_a, dtype=dtype))
    else:
        params.update(init_mlp(rng, config.seq_len * d_a, d_a, d_a, dtype=dtype))
    return params


def embed_tokens(params, batch: SubgraphBatch, config: EncoderConfig, training=False, rng=None) -> Tensor:
    """Token embeddings plus type embeddings, ``[B, L, D_A]``; padded slots are zero."""
    parts = [T.embed_lookup(params["anchor_table"], batch.anchors, batch.anchors != PAD)]
    if config.uses_nodes:
        nodes = batch.nodes
        x = T.embed_lookup(params["node_table"], nodes, nodes != PAD)
        x = T.linear(x, params["projection.weight"], params["projection.bias"])
        parts.append(T.dropout(x, config.dropout, training, rng))
    x = T.concat(parts, axis=1) if len(parts) > 1 else parts[0]
    x = T.add(x, T.index(params["type_embeddings"], config.token_types))
    return T.mul(x, batch.mask[..., None].astype(x.dtype))


def encode(params, batch: SubgraphBatch, config: EncoderConfig, training=False, rng=None) -> Tensor:
    """Self-attention encoder: one pre-norm block, then masked mean pooling."""
    mask = batch.mask
    if not mask.any(axis=1).all():
        bad = batch.entities[~mask.any(axis=1)]
        raise StarGraphError(f"entity {int(bad[0])} has an empty subgraph (every slot padded)")
    x = embed_tokens(params, batch, config, training, rng)
    y = self_attention_block(x, mask, params, config.heads, config.dropout, training, rng)
    return T.mean_pool(y, mask)


def encode_mlp(params, batch: SubgraphBatch, config: EncoderConfig, training=False, rng=None) -> Tensor:
    """Two-layer MLP over the concatenated token sequence (order-sensitive control)."""
    mask = batch.mask
    if not mask.any(axis=1).all():
        bad = batch.entities[~mask.any(axis=1)]
        raise StarGraphError(f"entity {int(bad[0])} has an empty subgraph (every slot padded)")
    x = embed_tokens(params, batch, config, training, rng)
    x = T.reshape(x, (len(batch), config.seq_len * config.d_a))
    return mlp(x, params, config.dropout, training, rng)


def run_encoder(params, batch, config: EncoderConfig, training=False, rng=None) -> Tensor:
    fn = encode if config.encoder == "attention" else encode_mlp
    return fn(params, batch, config, training, rng)
