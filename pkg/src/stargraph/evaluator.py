"""Filtered link-prediction ranking: MRR and Hits@k.

Two protocols: ``full`` ranks the true entity against every entity, and
``sampled`` against up to 1,000 random entities per query (ogbl style).
Candidates that complete a known triple are filtered out in both. Ties
are pessimistic: a candidate scoring equal to the true entity counts as
ranked above it.
"""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import StarGraphError

logger = logging.getLogger(__name__)

PROTOCOLS = ("full", "sampled")
SAMPLED_NEGATIVES = 1000
SIDES = ("head", "tail")


class Scorer(Protocol):
    num_entities: int

    def score_candidates(self, fixed, rels, side: str, candidates) -> np.ndarray: ...


class KnownTriples:
    """Index of true triples used for filtering."""

    def __init__(self, *splits: np.ndarray):
        self._tails: dict[tuple[int, int], set[int]] = defaultdict(set)
        self._heads: dict[tuple[int, int], set[int]] = defaultdict(set)
        for split in splits:
            for h, r, t in np.asarray(split, dtype=np.int64).reshape(-1, 3).tolist():
                self._tails[h, r].add(t)
                self._heads[r, t].add(h)

    def answers(self, fixed: int, rel: int, side: str) -> set[int]:
        """Entities ``x`` such that (x, rel, fixed) [head] or (fixed, rel, x) [tail] is known."""
        table = self._heads.get((rel, fixed)) if side == "head" else self._tails.get((fixed, rel))
        return table or set()

    def __contains__(self, triple) -> bool:
        h, r, t = (int(x) for x in triple)
        return t in self._tails.get((h, r), ())


def _query(triple, side: str) -> tuple[int, int, int]:
    h, r, t = (int(x) for x in triple)
    if side == "tail":
        return h, r, t
    if side == "head":
        return t, r, h
    raise StarGraphError(f"side must be head|tail, got {side!r}")


def sample_candidates(true: int, filtered: set[int], num_entities: int, n: int, rng) -> np.ndarray:
    """Up to ``n`` distinct entities, uniformly at random, excluding ``true`` and ``filtered``."""
    excluded = set(filtered) | {true}
    pool_size = num_entities - len({x for x in excluded if 0 <= x < num_entities})
    if pool_size <= n:
        pool = np.setdiff1d(np.arange(num_entities), np.fromiter(excluded, dtype=np.int64))
        return pool
    picked: list[int] = []
    seen = set(excluded)
    while len(picked) < n:
        for x in rng.integers(0, num_entities, size=2 * (n - len(picked))).tolist():
            if x not in seen:
                seen.add(x)
                picked.append(x)
                if len(picked) == n:
                    break
    return np.array(picked, dtype=np.int64)


def rank_filtered(
    triple,
    side: str,
    model: Scorer,
    known: KnownTriples,
    candidates=None,
) -> int:
    """Filtered rank of the true entity of ``triple`` on ``side``.

    ``candidates=None`` means every entity. Known answers other than the true
    entity are removed before ranking.
    """
    fixed, rel, true = _query(triple, side)
    if not (0 <= fixed < model.num_entities and 0 <= true < model.num_entities):
        raise StarGraphError(f"triple {tuple(int(x) for x in triple)} references an unknown entity")
    pool = np.arange(model.num_entities) if candidates is None else np.asarray(candidates, dtype=np.int64)
    drop = known.answers(fixed, rel, side) | {true}
    keep = pool[~np.isin(pool, np.fromiter(drop, dtype=np.int64))]
    scores = model.score_candidates([fixed], [rel], side, np.concatenate([[true], keep]))[0]
    return 1 + int(np.count_nonzero(scores[1:] >= scores[0]))


@dataclass
class RankResult:
    triples: np.ndarray
    head_ranks: np.ndarray
    tail_ranks: np.ndarray

    def all_ranks(self) -> np.ndarray:
        return np.concatenate([self.head_ranks, self.tail_ranks])


@dataclass
class MetricReport:
    mrr: float
    hits: dict[int, float]
    num_queries: int
    protocol: str
    head_mrr: float = float("nan")
    tail_mrr: float = float("nan")
    per_relation: dict[int, dict] = field(default_factory=dict)

    @classmethod
    def from_ranks(cls, result: RankResult, protocol: str, ks=(1, 3, 10)) -> "MetricReport":
        ranks = result.all_ranks()
        per_relation = {}
        rels = np.concatenate([result.triples[:, 1], result.triples[:, 1]])
        for r in np.unique(rels):
            rr = ranks[rels == r]
            per_relation[int(r)] = {"mrr": float(np.mean(1.0 / rr)), "count": int(len(rr))}
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits={k: float(np.mean(ranks <= k)) for k in ks},
            num_queries=len(ranks),
            protocol=protocol,
            head_mrr=float(np.mean(1.0 / result.head_ranks)),
            tail_mrr=float(np.mean(1.0 / result.tail_ranks)),
            per_relation=per_relation,
        )

    def to_dict(self) -> dict:
        return {
            "protocol": self.protocol,
            "mrr": self.mrr,
            "hits": {f"hits@{k}": v for k, v in self.hits.items()},
            "head_mrr": self.head_mrr,
            "tail_mrr": self.tail_mrr,
            "num_queries": self.num_queries,
            "per_relation": {str(r): v for r, v in self.per_relation.items()},
        }

    def to_json(self, **extra) -> str:
        return json.dumps({**self.to_dict(), **extra}, indent=2, sort_keys=True)


def _rank_side(triples, side, model, known, protocol, seed, num_negatives, chunk) -> np.ndarray:
    num_entities = model.num_entities
    ranks = np.empty(len(triples), dtype=np.int64)
    side_id = SIDES.index(side)
    for lo in range(0, len(triples), chunk):
        block = triples[lo : lo + chunk]
        queries = [_query(tr, side) for tr in block]
        fixed = np.array([q[0] for q in queries], dtype=np.int64)
        rels = np.array([q[1] for q in queries], dtype=np.int64)
        true = np.array([q[2] for q in queries], dtype=np.int64)
        if protocol == "full":
            scores = model.score_candidates(fixed, rels, side, np.arange(num_entities))
            valid = np.ones_like(scores, dtype=bool)
            for i, (f, r, t) in enumerate(queries):
                answers = known.answers(f, r, side)
                if answers:
                    valid[i, list(answers)] = False
                valid[i, t] = False
            true_scores = scores[np.arange(len(block)), true]
        else:
            cands = []
            for i, (f, r, t) in enumerate(queries):
                rng = np.random.default_rng([seed, lo + i, side_id])
                cands.append(sample_candidates(t, known.answers(f, r, side), num_entities, num_negatives, rng))
            width = max(len(c) for c in cands)
            matrix = np.zeros((len(block), 1 + width), dtype=np.int64)
            valid = np.zeros(matrix.shape, dtype=bool)
            matrix[:, 0] = true
            for i, c in enumerate(cands):
                matrix[i, 1 : 1 + len(c)] = c
                valid[i, 1 : 1 + len(c)] = True
            scores = model.score_candidates(fixed, rels, side, matrix)
            true_scores = scores[:, 0]
        ranks[lo : lo + len(block)] = 1 + np.count_nonzero((scores >= true_scores[:, None]) & valid, axis=1)
    return ranks


def rank_split(
    triples,
    model: Scorer,
    known: KnownTriples,
    protocol: str = "full",
    seed: int = 0,
    num_negatives: int = SAMPLED_NEGATIVES,
    chunk: int | None = None,
) -> RankResult:
    if protocol not in PROTOCOLS:
        raise StarGraphError(f"unknown protocol {protocol!r} (expected full|sampled)")
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise StarGraphError("cannot evaluate an empty split")
    ents = triples[:, [0, 2]]
    if ents.min() < 0 or ents.max() >= model.num_entities:
        raise StarGraphError("split references an entity outside the model")
    if chunk is None:
        width = model.num_entities if protocol == "full" else num_negatives + 1
        chunk = max(1, min(1024, (1 << 22) // max(width, 1)))
    head = _rank_side(triples, "head", model, known, protocol, seed, num_negatives, chunk)
    tail = _rank_side(triples, "tail", model, known, protocol, seed, num_negatives, chunk)
    return RankResult(triples, head, tail)


def evaluate(
    triples,
    model: Scorer,
    known: KnownTriples,
    protocol: str = "full",
    seed: int = 0,
    num_negatives: int = SAMPLED_NEGATIVES,
) -> MetricReport:
    """MRR and Hits@{1,3,10} averaged over head and tail queries of every triple."""
    result = rank_split(triples, model, known, protocol, seed, num_negatives)
    report = MetricReport.from_ranks(result, protocol)
    logger.info("%s protocol: MRR %.4f over %d queries", protocol, report.mrr, report.num_queries)
    return report


class RandomScoreModel:
    """Scores every (query, candidate) pair with an independent U(0, 1) draw."""

    def __init__(self, num_entities: int, seed: int = 0):
        self.num_entities = num_entities
        self.rng = np.random.default_rng(seed)

    def score_candidates(self, fixed, rels, side, candidates) -> np.ndarray:
        candidates = np.asarray(candidates)
        return self.rng.random((len(fixed), candidates.shape[-1]))


class ConstantScoreModel:
    def __init__(self, num_entities: int, value: float = 0.0):
        self.num_entities = num_entities
        self.value = value

    def score_candidates(self, fixed, rels, side, candidates) -> np.ndarray:
        return np.full((len(fixed), np.asarray(candidates).shape[-1]), self.value)
