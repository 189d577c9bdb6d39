"""Built-in gradient checks: every differentiable op, the attention block,
and the full encoder -> score -> loss composite on a 10-entity model.

Shared by the ``grad-check`` subcommand and the test suite. All checks run
in float64 with dropout off.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .gradcheck import GradCheckReport, grad_check
from .layers import init_block, init_mlp, mlp, self_attention_block
from .tensor import Parameter, Tensor


@dataclass
class CheckCase:
    name: str
    params: list[Parameter]
    closure: Callable[[], Tensor]


def _param(rng, shape, name, scale=1.0):
    return Parameter(scale * rng.standard_normal(shape), name)


def _probe(rng, out_shape):
    """Random weights turning an op output into a scalar with a generic gradient."""
    return rng.standard_normal(out_shape)


def _scalar(y: Tensor, w: np.ndarray) -> Tensor:
    return T.total(T.mul(y, w))


def _unary(rng, name, op, shape=(3, 5)):
    x = _param(rng, shape, "x")
    w = _probe(rng, op(x).shape)
    return CheckCase(name, [x], lambda: _scalar(op(x), w))


def _binary(rng, name, op, sa=(3, 5), sb=(3, 5)):
    a, b = _param(rng, sa, "a"), _param(rng, sb, "b")
    w = _probe(rng, op(a, b).shape)
    return CheckCase(name, [a, b], lambda: _scalar(op(a, b), w))


def op_cases(seed: int) -> list[CheckCase]:
    rng = np.random.default_rng([seed, 11])
    cases = [
        _binary(rng, "add", T.add, (3, 5), (5,)),
        _binary(rng, "sub", T.sub, (3, 5), (3, 1)),
        _binary(rng, "mul", T.mul, (3, 5), (3, 5)),
        _binary(rng, "matmul", T.matmul, (3, 5), (5, 4)),
        _binary(rng, "matmul_batched", T.matmul, (2, 3, 5), (2, 5, 4)),
        _unary(rng, "relu", T.relu),
        _unary(rng, "log_sigmoid", T.log_sigmoid),
        _unary(rng, "reshape", lambda x: T.reshape(x, (5, 3))),
        _unary(rng, "transpose", lambda x: T.transpose(x, (1, 0))),
        _unary(rng, "index", lambda x: T.index(x, np.array([2, 0, 2, 1]))),
        _unary(rng, "slice", lambda x: T.index(x, (slice(None), slice(1, 4)))),
        _unary(rng, "total", lambda x: T.total(x, axis=1)),
        _unary(rng, "mean", T.mean),
        _unary(rng, "l1_norm", T.l1_norm),
        _unary(rng, "l2_norm", T.l2_norm),
    ]

    a, b = _param(rng, (3, 2), "a"), _param(rng, (3, 4), "b")
    w = _probe(rng, (3, 6))
    cases.append(CheckCase("concat", [a, b], lambda a=a, b=b, w=w: _scalar(T.concat([a, b], axis=1), w)))

    x, wt, bias = _param(rng, (4, 5), "x"), _param(rng, (5, 3), "weight"), _param(rng, (3,), "bias")
    w = _probe(rng, (4, 3))
    cases.append(CheckCase("linear", [x, wt, bias], lambda x=x, w=w: _scalar(T.linear(x, wt, bias), w)))

    table = _param(rng, (6, 4), "table")
    ids = np.array([[0, 3, 3], [5, -1, 1]])
    mask = ids >= 0
    w = _probe(rng, (2, 3, 4))
    cases.append(CheckCase("embed_lookup", [table], lambda w=w: _scalar(T.embed_lookup(table, ids, mask), w)))

    x, gain, beta = _param(rng, (3, 6), "x"), _param(rng, (6,), "gain"), _param(rng, (6,), "bias")
    w = _probe(rng, (3, 6))
    cases.append(CheckCase("layer_norm", [x, gain, beta], lambda x=x, w=w: _scalar(T.layer_norm(x, gain, beta), w)))

    x = _param(rng, (3, 5), "x")
    smask = np.ones((3, 5), dtype=bool)
    smask[0, 3:] = False
    w = _probe(rng, (3, 5))
    cases.append(CheckCase("softmax_masked", [x], lambda x=x, w=w: _scalar(T.softmax(x, smask), w)))

    x = _param(rng, (2, 4, 3), "x")
    pmask = np.array([[True, True, False, True], [True, False, False, False]])
    w = _probe(rng, (2, 3))
    cases.append(CheckCase("mean_pool", [x], lambda x=x, w=w: _scalar(T.mean_pool(x, pmask), w)))

    x = _param(rng, (3, 5), "x")
    w = _probe(rng, (3, 5))
    cases.append(CheckCase("dropout_eval", [x], lambda x=x, w=w: _scalar(T.dropout(x, 0.5, False, None), w)))
    return cases


def block_case(seed: int) -> CheckCase:
    rng = np.random.default_rng([seed, 12])
    d, n, heads = 8, 4, 2
    params = init_block(rng, d, 4 * d, dtype=np.float64)
    x = _param(rng, (2, n, d), "x")
    mask = np.array([[True] * n, [True, True, False, False]])
    w = _probe(rng, (2, n, d))
    return CheckCase(
        "attention_block",
        list(params.values()) + [x],
        lambda: _scalar(self_attention_block(x, mask, params, heads), w),
    )


def mlp_case(seed: int) -> CheckCase:
    rng = np.random.default_rng([seed, 13])
    params = init_mlp(rng, 6, 8, 4, dtype=np.float64)
    x = _param(rng, (3, 6), "x")
    w = _probe(rng, (3, 4))
    return CheckCase("mlp", list(params.values()) + [x], lambda: _scalar(mlp(x, params), w))


def composite_case(seed: int, encoder: str = "attention", norm: str = "l1") -> CheckCase:
    """Encoder -> score -> self-adversarial loss on a 10-entity random graph.

    ``alpha`` is 0 so the adversarial weights are uniform: with alpha > 0 the
    weights are deliberately excluded from backprop, which a finite
    difference through the forward pass cannot reproduce.
    """
    from .datasets import random_graph
    from .encoder import EncoderConfig
    from .model import StarGraphModel
    from .objective import ScoreConfig
    from .trainer import sample_negatives
    from .vocab import build_vocabulary, select_anchors

    data = random_graph(10, 25, num_relations=2, seed=seed)
    vocab = build_vocabulary(data.graph, select_anchors(data.graph, 3), k=2, m=2)
    model = StarGraphModel(
        vocab,
        data.num_relations,
        EncoderConfig(d_a=8, d_n=4, k_anchors=2, m_neighbors=2, heads=2, dropout=0.0, encoder=encoder),
        ScoreConfig(u=0.5, norm=norm, alpha=0.0),
        seed=seed,
        dtype=np.float64,
    )
    batch = sample_negatives(data.train[:6], 3, 10, np.random.default_rng([seed, 14]))
    return CheckCase(f"composite_{encoder}_{norm}", model.parameters(), lambda: model.loss(batch))


def all_cases(seed: int) -> list[CheckCase]:
    cases = op_cases(seed) + [block_case(seed), mlp_case(seed)]
    for encoder in ("attention", "mlp"):
        for norm in ("l1", "l2"):
            cases.append(composite_case(seed, encoder, norm))
    return cases


def run_checks(seed: int, eps: float = 1e-3, tolerance: float = 1e-4) -> list[tuple[str, GradCheckReport]]:
    return [(c.name, grad_check(c.closure, c.params, eps=eps, tolerance=tolerance)) for c in all_cases(seed)]
