"""Triple scoring (TripleREv2, TripleRE') and the self-adversarial loss.

Scores are negated distances, so they are always <= 0 and larger means
more plausible. A relation row holds ``[r_head | r_tail | r]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import StarGraphError
from .tensor import Tensor

SCORES = ("triplere_prime", "triplere_v2")


@dataclass(frozen=True)
class ScoreConfig:
    score: str = "triplere_prime"
    u: float = 0.1
    norm: str = "l1"
    gamma: float = 6.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.score not in SCORES:
            raise StarGraphError(f"unknown score {self.score!r} (expected {'|'.join(SCORES)})")
        if self.norm not in ("l1", "l2"):
            raise StarGraphError(f"unknown norm {self.norm!r} (expected l1|l2)")
        if not np.isfinite(self.u):
            raise StarGraphError("u must be finite")
        if self.gamma <= 0:
            raise StarGraphError("gamma must be positive")


@dataclass(frozen=True)
class TripleBatch:
    positives: np.ndarray  # [B, 3] (head, rel, tail)
    negatives: np.ndarray  # [B, n] replacement entity ids
    corrupt_head: np.ndarray  # [B] bool

    def __len__(self) -> int:
        return len(self.positives)

    def entities(self) -> np.ndarray:
        return np.unique(np.concatenate([self.positives[:, 0], self.positives[:, 2], self.negatives.ravel()]))


def _same_width(*xs) -> None:
    widths = {x.shape[-1] for x in xs}
    if len(widths) != 1:
        raise StarGraphError(f"embedding widths disagree: {sorted(widths)}")


def _wrap(*xs):
    return [T.as_tensor(np.asarray(x, dtype=np.float64)) if not isinstance(x, Tensor) else x for x in xs]


def score_v2(h, t, r_head, r_tail, r, u: float, norm: str = "l1") -> Tensor:
    """-|| h*(r_head + u) - t*(r_tail + u) + r ||."""
    h, t, r_head, r_tail, r = _wrap(h, t, r_head, r_tail, r)
    _same_width(h, t, r_head, r_tail, r)
    inner = T.add(T.sub(T.mul(h, T.add(r_head, u)), T.mul(t, T.add(r_tail, u))), r)
    return T.mul(T.norm(inner, norm), -1.0)


def score_prime(h, t, r_head, r_tail, r, u: float, norm: str = "l1") -> Tensor:
    """-|| h - t + r + u*(h*r_head - t*r_tail) ||: TransE plus a scaled PairRE term."""
    h, t, r_head, r_tail, r = _wrap(h, t, r_head, r_tail, r)
    _same_width(h, t, r_head, r_tail, r)
    translation = T.add(T.sub(h, t), r)
    pair = T.sub(T.mul(h, r_head), T.mul(t, r_tail))
    return T.mul(T.norm(T.add(translation, T.mul(pair, u)), norm), -1.0)


def transe_score(h, t, r, norm: str = "l1") -> Tensor:
    h, t, r = _wrap(h, t, r)
    _same_width(h, t, r)
    return T.mul(T.norm(T.add(T.sub(h, t), r), norm), -1.0)


def split_relation(rel: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    d3 = rel.shape[-1]
    if d3 % 3:
        raise StarGraphError(f"relation width {d3} is not a multiple of 3")
    d = d3 // 3
    return tuple(T.index(rel, (Ellipsis, slice(i * d, (i + 1) * d))) for i in range(3))


def relation_scales(config: ScoreConfig, r_head, r_tail) -> tuple[Tensor, Tensor]:
    """Per-dimension multipliers applied to head and tail.

    TripleRE': (1 + u*r_head, 1 + u*r_tail); TripleREv2: (r_head + u, r_tail + u).
    """
    if config.score == "triplere_prime":
        return T.add(T.mul(r_head, config.u), 1.0), T.add(T.mul(r_tail, config.u), 1.0)
    return T.add(r_head, config.u), T.add(r_tail, config.u)


def score(config: ScoreConfig, h, t, rel: Tensor) -> Tensor:
    """Batched scorer: -|| (h*s_head + r) - t*s_tail ||, broadcasting h against t.

    Algebraically identical to :func:`score_prime` / :func:`score_v2`, but the
    relation-only terms are folded first so the broadcast dimension (the
    candidates) sees only one multiply, one subtract and the norm.
    """
    h, t, rel = _wrap(h, t, rel)
    r_head, r_tail, r = split_relation(rel)
    _same_width(h, t, r)
    s_head, s_tail = relation_scales(config, r_head, r_tail)
    if h.data.size <= t.data.size:
        inner = T.sub(T.add(T.mul(h, s_head), r), T.mul(t, s_tail))
    else:
        inner = T.add(T.mul(h, s_head), T.sub(r, T.mul(t, s_tail)))
    return T.mul(T.norm(inner, config.norm), -1.0)


def adversarial_weights(neg_scores, alpha: float = 1.0) -> np.ndarray:
    """Softmax of ``alpha * score`` over the last axis; used as constants."""
    z = alpha * np.asarray(neg_scores, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def self_adversarial_loss(pos_score, neg_scores, gamma: float, alpha: float = 1.0) -> Tensor:
    """-log sig(gamma - d_pos) - sum_i w_i log sig(d_i - gamma), with d = -score.

    Weights are a softmax over the negatives' scores, so the hardest
    negatives dominate; no gradient flows through them. ``pos_score`` has
    shape ``[...]`` and ``neg_scores`` shape ``[..., n]``; the result has the
    shape of ``pos_score``.
    """
    pos_score, neg_scores = _wrap(pos_score, neg_scores)
    if neg_scores.ndim == 0 or neg_scores.shape[-1] == 0:
        raise StarGraphError("self-adversarial loss needs at least one negative")
    if gamma <= 0:
        raise StarGraphError("gamma must be positive")
    w = adversarial_weights(neg_scores.data, alpha).astype(neg_scores.dtype)
    pos_term = T.log_sigmoid(T.add(pos_score, gamma))
    neg_term = T.total(T.mul(T.log_sigmoid(T.sub(T.mul(neg_scores, -1.0), gamma)), w), axis=-1)
    return T.mul(T.add(pos_term, neg_term), -1.0)


def _locate(entity_ids: np.ndarray, wanted: np.ndarray) -> np.ndarray:
    loc = np.searchsorted(entity_ids, wanted)
    loc = np.minimum(loc, len(entity_ids) - 1)
    if not np.array_equal(entity_ids[loc], wanted):
        raise StarGraphError("batch references an entity that was not encoded")
    return loc


def batch_objective(
    entity_reps: Tensor,
    entity_ids: np.ndarray,
    relation_table: Tensor,
    batch: TripleBatch,
    config: ScoreConfig,
) -> Tensor:
    """Mean self-adversarial loss over the positives of ``batch``.

    ``entity_reps[i]`` is the representation of ``entity_ids[i]`` (sorted).
    Rows are grouped by corrupted side so the fixed side broadcasts against
    its ``1 + n`` candidates.
    """
    b = len(batch)
    if entity_reps.ndim != 2 or entity_reps.shape[0] != len(entity_ids):
        raise StarGraphError(f"representation shape {entity_reps.shape} vs {len(entity_ids)} entities")
    if batch.negatives.shape[0] != b or batch.corrupt_head.shape != (b,):
        raise StarGraphError("negatives / corruption flags do not match the batch size")
    if relation_table.shape[-1] != 3 * entity_reps.shape[-1]:
        raise StarGraphError(
            f"relation width {relation_table.shape[-1]} != 3 x entity width {entity_reps.shape[-1]}"
        )
    heads, rels, tails = batch.positives.T
    total = None
    for corrupt_head in (False, True):
        rows = np.flatnonzero(batch.corrupt_head == corrupt_head)
        if rows.size == 0:
            continue
        fixed, replaced = (tails, heads) if corrupt_head else (heads, tails)
        cand = np.concatenate([replaced[rows, None], batch.negatives[rows]], axis=1)
        fixed_rep = T.index(entity_reps, _locate(entity_ids, fixed[rows])[:, None])
        cand_rep = T.index(entity_reps, _locate(entity_ids, cand))
        rel = T.index(relation_table, rels[rows, None])
        h, t = (cand_rep, fixed_rep) if corrupt_head else (fixed_rep, cand_rep)
        s = score(config, h, t, rel)
        loss = T.total(self_adversarial_loss(T.index(s, (slice(None), 0)), T.index(s, (slice(None), slice(1, None))), config.gamma, config.alpha))
        total = loss if total is None else T.add(total, loss)
    return T.mul(total, 1.0 / b)
