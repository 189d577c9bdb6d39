"""Built-in synthetic graphs used by the presets and the test suite."""

from __future__ import annotations

from collections import deque

import numpy as np

from .graph import DatasetSplits, from_arrays

STAR_EDGES = [(1, 0, 0), (2, 0, 0), (3, 0, 0), (4, 0, 3), (5, 0, 3)]


def star_graph() -> DatasetSplits:
    """Hubs 0 and 3 (degree 3) with leaves 1, 2 on 0 and 4, 5 on 3."""
    return from_arrays(STAR_EDGES, num_entities=6, num_relations=1)


def toy_triples(num_triples: int = 1500, seed: int = 0) -> np.ndarray:
    """Compositional KG over 200 entities laid out on a 20 x 10 torus.

    Entity ``e`` sits at (a, b) = (e % 20, e // 20). Relations:
    0: a+1; 1: b+1; 2: (a+1, b+1), the composition of 0 and 1; 3: a+2, the
    composition of 0 with itself; 4: a+3, a+7, a+11 (one-to-many);
    5: a -> 19-a (symmetric).
    """
    ent = np.arange(200)
    a, b = ent % 20, ent // 20

    def at(aa, bb):
        return (aa % 20) + 20 * (bb % 10)

    triples = [
        np.stack([ent, np.full(200, 0), at(a + 1, b)], 1),
        np.stack([ent, np.full(200, 1), at(a, b + 1)], 1),
        np.stack([ent, np.full(200, 2), at(a + 1, b + 1)], 1),
        np.stack([ent, np.full(200, 3), at(a + 2, b)], 1),
    ]
    triples += [np.stack([ent, np.full(200, 4), at(a + off, b)], 1) for off in (3, 7, 11)]
    triples.append(np.stack([ent, np.full(200, 5), at(19 - a, b)], 1))
    everything = np.concatenate(triples).astype(np.int64)
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.permutation(len(everything))[:num_triples])
    return everything[keep]


def toy_kg(seed: int = 0) -> DatasetSplits:
    """The memorization setup: train = valid = test."""
    triples = toy_triples(seed=seed)
    return from_arrays(triples, triples, triples, num_entities=200, num_relations=6)


def _connected(n: int, triples: np.ndarray) -> bool:
    adj = [[] for _ in range(n)]
    for h, _, t in triples.tolist():
        adj[h].append(t)
        adj[t].append(h)
    seen = {0}
    queue = deque([0])
    while queue:
        for y in adj[queue.popleft()]:
            if y not in seen:
                seen.add(y)
                queue.append(y)
    return len(seen) == n


def toy_holdout(fraction: float = 0.1, seed: int = 0) -> DatasetSplits:
    """Toy KG with ``fraction`` of triples held out as test (valid = test).

    A held-out triple is only accepted if the remaining train graph keeps
    every entity at degree >= 2 and stays connected.
    """
    triples = toy_triples(seed=0)
    rng = np.random.default_rng(seed)
    target = int(round(fraction * len(triples)))
    degree = np.bincount(triples[:, [0, 2]].ravel(), minlength=200)
    held = []
    for i in rng.permutation(len(triples)):
        if len(held) == target:
            break
        h, _, t = triples[i]
        if degree[h] > 2 and degree[t] > 2:
            degree[h] -= 1
            degree[t] -= 1
            held.append(i)
    mask = np.zeros(len(triples), dtype=bool)
    mask[held] = True
    train, test = triples[~mask], triples[mask]
    if not _connected(200, train):
        raise RuntimeError("held-out split disconnected the toy graph; pick another seed")
    return from_arrays(train, test, test, num_entities=200, num_relations=6)


def random_triples(num_entities: int, num_edges: int, num_relations: int = 3, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.stack(
        [
            rng.integers(0, num_entities, num_edges),
            rng.integers(0, num_relations, num_edges),
            rng.integers(0, num_entities, num_edges),
        ],
        axis=1,
    ).astype(np.int64)


def random_graph(num_entities: int, num_edges: int, num_relations: int = 3, seed: int = 0) -> DatasetSplits:
    return from_arrays(
        random_triples(num_entities, num_edges, num_relations, seed),
        num_entities=num_entities,
        num_relations=num_relations,
    )


def skewed_triples(num_entities: int, num_edges: int, num_relations: int = 50, seed: int = 0) -> np.ndarray:
    """Random edges whose tails concentrate on low ids, giving a heavy-tailed degree profile."""
    rng = np.random.default_rng(seed)
    heads = rng.integers(0, num_entities, num_edges)
    tails = (num_entities * rng.random(num_edges) ** 2).astype(np.int64)
    rels = rng.integers(0, num_relations, num_edges)
    return np.stack([heads, rels, tails], axis=1)
