"""The transformer block and the MLP control, as plain functions over parameter dicts."""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import StarGraphError
from .tensor import Parameter, Tensor


def linear_params(rng, d_in: int, d_out: int, prefix: str, dtype) -> dict[str, Parameter]:
    return {
        f"{prefix}.weight": Parameter(T.kaiming_uniform(rng, d_in, (d_in, d_out), dtype), f"{prefix}.weight"),
        f"{prefix}.bias": Parameter(np.zeros(d_out, dtype=dtype), f"{prefix}.bias"),
    }


def _norm_params(d: int, prefix: str, dtype) -> dict[str, Parameter]:
    return {
        f"{prefix}.gain": Parameter(np.ones(d, dtype=dtype), f"{prefix}.gain"),
        f"{prefix}.bias": Parameter(np.zeros(d, dtype=dtype), f"{prefix}.bias"),
    }


def init_block(rng, d: int, ffn_dim: int, prefix: str = "block", dtype=np.float32) -> dict[str, Parameter]:
    params: dict[str, Parameter] = {}
    params.update(_norm_params(d, f"{prefix}.ln1", dtype))
    for name in ("query", "key", "value", "out"):
        params.update(linear_params(rng, d, d, f"{prefix}.{name}", dtype))
    params.update(_norm_params(d, f"{prefix}.ln2", dtype))
    params.update(linear_params(rng, d, ffn_dim, f"{prefix}.ffn1", dtype))
    params.update(linear_params(rng, ffn_dim, d, f"{prefix}.ffn2", dtype))
    return params


def _lin(x, params, name, prefix):
    return T.linear(x, params[f"{prefix}.{name}.weight"], params[f"{prefix}.{name}.bias"])


def self_attention_block(
    x: Tensor,
    mask,
    params: dict[str, Parameter],
    heads: int,
    dropout: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    prefix: str = "block",
) -> Tensor:
    """Pre-norm block: h = x + Attn(LN(x)); y = h + FFN(LN(h)).

    ``x`` is ``[L, D]`` or ``[B, L, D]``; ``mask`` marks real tokens (True)
    and has the shape of ``x`` without the last axis. Padded keys get zero
    attention weight. Dropout follows the attention output projection and
    each FFN linear.
    """
    mask = np.asarray(mask, dtype=bool)
    single = x.ndim == 2
    if single:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask[None]
    b, n, d = x.shape
    if mask.shape != (b, n):
        raise StarGraphError(f"attention mask shape {mask.shape} != {(b, n)}")
    if not mask.any(axis=1).all():
        raise StarGraphError("self-attention over a sequence with every token masked")
    if d % heads:
        raise StarGraphError(f"model width {d} not divisible by {heads} heads")
    dh = d // heads

    def split_heads(t):
        return T.transpose(T.reshape(t, (b, n, heads, dh)), (0, 2, 1, 3))

    z = T.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
    q = split_heads(_lin(z, params, "query", prefix))
    k = split_heads(_lin(z, params, "key", prefix))
    v = split_heads(_lin(z, params, "value", prefix))
    logits = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    weights = T.softmax(logits, mask[:, None, None, :])
    att = T.reshape(T.transpose(T.matmul(weights, v), (0, 2, 1, 3)), (b, n, d))
    att = T.dropout(_lin(att, params, "out", prefix), dropout, training, rng)
    h = T.add(x, att)

    z = T.layer_norm(h, params[f"{prefix}.ln2.gain"], params[f"{prefix}.ln2.bias"])
    z = T.dropout(T.relu(_lin(z, params, "ffn1", prefix)), dropout, training, rng)
    z = T.dropout(_lin(z, params, "ffn2", prefix), dropout, training, rng)
    y = T.add(h, z)
    return T.reshape(y, (n, d)) if single else y


def attention_weights(x: Tensor, mask, params, heads: int, prefix: str = "block") -> np.ndarray:
    """Softmax weights of the block's attention layer, ``[B, H, L, L]`` (for inspection)."""
    mask = np.asarray(mask, dtype=bool)
    if x.ndim == 2:
        x, mask = T.reshape(x, (1,) + x.shape), mask[None]
    b, n, d = x.shape
    dh = d // heads
    with T.no_grad():
        z = T.layer_norm(x, params[f"{prefix}.ln1.gain"], params[f"{prefix}.ln1.bias"])
        q = _lin(z, params, "query", prefix).data.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        k = _lin(z, params, "key", prefix).data.reshape(b, n, heads, dh).transpose(0, 2, 1, 3)
        logits = Tensor(q @ k.transpose(0, 1, 3, 2) / math.sqrt(dh))
        return T.softmax(logits, mask[:, None, None, :]).data


def init_mlp(rng, d_in: int, d_hidden: int, d_out: int, prefix: str = "mlp", dtype=np.float32):
    params = linear_params(rng, d_in, d_hidden, f"{prefix}.fc1", dtype)
    params.update(linear_params(rng, d_hidden, d_out, f"{prefix}.fc2", dtype))
    return params


def mlp(x: Tensor, params, dropout: float = 0.0, training: bool = False, rng=None, prefix: str = "mlp") -> Tensor:
    z = T.dropout(T.relu(_lin(x, params, "fc1", prefix)), dropout, training, rng)
    return T.dropout(_lin(z, params, "fc2", prefix), dropout, training, rng)
