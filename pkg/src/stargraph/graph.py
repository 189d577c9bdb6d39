"""Triple store: ingestion, dense id assignment, adjacency and degree index.

Adjacency is the undirected view of the train split in CSR form. Each
neighbor list is sorted by (neighbor degree desc, neighbor id asc) so
degree-ordered sampling is a prefix scan.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .binio import BinaryReader
from .errors import FormatError, StarGraphError

logger = logging.getLogger(__name__)

GRAPH_MAGIC = b"SGKG1"
GRAPH_FORMAT_VERSION = 1
_HEADER = struct.Struct("<8Q")

OUTGOING = 0  # u is the head of the edge
INCOMING = 1  # u is the tail of the edge


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable train-split graph with a CSR adjacency index.

    ``neighbors[indptr[u]:indptr[u + 1]]`` lists the neighbors of ``u``;
    ``relations`` and ``directions`` are aligned with it. A self-loop is
    listed once but contributes 2 to the degree.
    """

    num_entities: int
    num_relations: int
    triples: np.ndarray
    indptr: np.ndarray
    neighbors: np.ndarray
    relations: np.ndarray
    directions: np.ndarray
    degrees: np.ndarray
    _checksum: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def from_triples(cls, triples, num_entities: int, num_relations: int) -> "Graph":
        triples = np.ascontiguousarray(np.asarray(triples, dtype=np.int64).reshape(-1, 3))
        _check_ranges(triples, num_entities, num_relations)
        adj = build_adjacency(triples, num_entities)
        return cls(num_entities, num_relations, triples, *adj)

    @property
    def num_triples(self) -> int:
        return len(self.triples)

    def _check_entity(self, u: int) -> int:
        u = int(u)
        if not 0 <= u < self.num_entities:
            raise StarGraphError(f"entity id {u} out of range [0, {self.num_entities})")
        return u

    def degree(self, u: int) -> int:
        return int(self.degrees[self._check_entity(u)])

    def adj(self, u: int) -> list[tuple[int, int, int]]:
        """Neighbor entries ``(neighbor, relation, direction)`` of ``u``."""
        u = self._check_entity(u)
        lo, hi = self.indptr[u], self.indptr[u + 1]
        return list(
            zip(
                self.neighbors[lo:hi].tolist(),
                self.relations[lo:hi].tolist(),
                self.directions[lo:hi].tolist(),
            )
        )

    def neighbor_ids(self, u: int) -> np.ndarray:
        u = self._check_entity(u)
        return self.neighbors[self.indptr[u] : self.indptr[u + 1]]

    def checksum(self) -> bytes:
        """SHA-256 over the counts and the train triples."""
        if not self._checksum:
            h = hashlib.sha256()
            h.update(struct.pack("<2Q", self.num_entities, self.num_relations))
            h.update(self.triples.astype("<i8").tobytes())
            self._checksum.append(h.digest())
        return self._checksum[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.num_entities == other.num_entities
            and self.num_relations == other.num_relations
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("triples", "indptr", "neighbors", "relations", "directions", "degrees")
            )
        )

    __hash__ = None


@dataclass(eq=False)
class DatasetSplits:
    graph: Graph
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    entity_labels: list[str] | None = None
    relation_labels: list[str] | None = None

    @property
    def num_entities(self) -> int:
        return self.graph.num_entities

    @property
    def num_relations(self) -> int:
        return self.graph.num_relations

    def split(self, name: str) -> np.ndarray:
        if name not in ("train", "valid", "test"):
            raise StarGraphError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test])

    def __eq__(self, other) -> bool:
        if not isinstance(other, DatasetSplits):
            return NotImplemented
        return (
            self.graph == other.graph
            and all(np.array_equal(self.split(s), other.split(s)) for s in ("train", "valid", "test"))
            and self.entity_labels == other.entity_labels
            and self.relation_labels == other.relation_labels
        )

    __hash__ = None


def _check_ranges(triples: np.ndarray, num_entities: int, num_relations: int) -> None:
    if len(triples) == 0:
        return
    ents = triples[:, [0, 2]]
    if ents.min() < 0 or ents.max() >= num_entities:
        raise StarGraphError(f"entity id out of range [0, {num_entities})")
    if triples[:, 1].min() < 0 or triples[:, 1].max() >= num_relations:
        raise StarGraphError(f"relation id out of range [0, {num_relations})")


def build_adjacency(triples: np.ndarray, num_entities: int):
    """Build the undirected CSR adjacency and degree index from train triples.

    Returns ``(indptr, neighbors, relations, directions, degrees)``.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    heads, rels, tails = triples[:, 0], triples[:, 1], triples[:, 2]
    degrees = np.bincount(heads, minlength=num_entities) + np.bincount(tails, minlength=num_entities)

    loop = heads == tails
    not_loop = ~loop
    src = np.concatenate([heads, tails[not_loop]])
    dst = np.concatenate([tails, heads[not_loop]])
    rel = np.concatenate([rels, rels[not_loop]])
    direction = np.concatenate(
        [np.full(len(heads), OUTGOING, np.int8), np.full(int(not_loop.sum()), INCOMING, np.int8)]
    )
    del loop, not_loop

    # primary key last: src asc, neighbor degree desc, neighbor id asc
    order = np.lexsort((direction, rel, dst, -degrees[dst], src))
    src = src[order]
    neighbors = np.ascontiguousarray(dst[order])
    relations = np.ascontiguousarray(rel[order])
    directions = np.ascontiguousarray(direction[order])
    del order, dst, rel, direction

    indptr = np.zeros(num_entities + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=num_entities), out=indptr[1:])
    return indptr, neighbors, relations, directions, degrees.astype(np.int64)


# ---------------------------------------------------------------------------
# Text ingestion


class _Index:
    """First-seen-order label dictionary."""

    def __init__(self):
        self.ids: dict[str, int] = {}
        self.labels: list[str] = []

    def __call__(self, label: str) -> int:
        idx = self.ids.get(label)
        if idx is None:
            idx = self.ids[label] = len(self.labels)
            self.labels.append(label)
        return idx


def read_triples(
    path: str | os.PathLike,
    fmt: str = "ids",
    entities: _Index | None = None,
    relations: _Index | None = None,
) -> np.ndarray:
    """Parse one whitespace-separated triple per line. Blank lines are skipped."""
    if fmt not in ("ids", "labels"):
        raise StarGraphError(f"unknown triple format {fmt!r} (expected ids|labels)")
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 fields, got {len(fields)}")
            if fmt == "labels":
                rows.append((entities(fields[0]), relations(fields[1]), entities(fields[2])))
                continue
            try:
                h, r, t = (int(x) for x in fields)
            except ValueError:
                raise FormatError(f"{path}:{lineno}: non-integer id in {line.strip()!r}") from None
            if h < 0 or r < 0 or t < 0:
                raise FormatError(f"{path}:{lineno}: negative id in {line.strip()!r}")
            rows.append((h, r, t))
    return np.array(rows, dtype=np.int64).reshape(-1, 3)


def ingest(
    train_path: str | os.PathLike,
    valid_path: str | os.PathLike | None = None,
    test_path: str | os.PathLike | None = None,
    fmt: str = "ids",
    num_entities: int | None = None,
    num_relations: int | None = None,
) -> DatasetSplits:
    """Load train/valid/test triple files and build the train graph.

    In ``ids`` mode the counts default to ``max id + 1`` over all splits;
    declared counts are validated. In ``labels`` mode ids are assigned in
    first-seen order across train, valid, test.
    """
    entities, relations = (_Index(), _Index()) if fmt == "labels" else (None, None)
    splits = []
    for path in (train_path, valid_path, test_path):
        if path is None:
            splits.append(np.zeros((0, 3), dtype=np.int64))
        else:
            splits.append(read_triples(path, fmt, entities, relations))
    train, valid, test = splits
    if len(train) == 0:
        raise FormatError(f"{train_path}: no triples")

    everything = np.concatenate(splits)
    if fmt == "labels":
        n_ent, n_rel = len(entities.labels), len(relations.labels)
    else:
        n_ent = int(everything[:, [0, 2]].max()) + 1
        n_rel = int(everything[:, 1].max()) + 1
        if num_entities is not None:
            if n_ent > num_entities:
                raise FormatError(f"entity id {n_ent - 1} out of declared range [0, {num_entities})")
            n_ent = num_entities
        if num_relations is not None:
            if n_rel > num_relations:
                raise FormatError(f"relation id {n_rel - 1} out of declared range [0, {num_relations})")
            n_rel = num_relations

    graph = Graph.from_triples(train, n_ent, n_rel)
    logger.info(
        "ingested %d entities, %d relations, %d/%d/%d train/valid/test triples",
        n_ent, n_rel, len(train), len(valid), len(test),
    )
    return DatasetSplits(
        graph,
        train,
        valid,
        test,
        entities.labels if entities else None,
        relations.labels if relations else None,
    )


def dedup_triples(triples: np.ndarray) -> np.ndarray:
    """Drop repeated triples, keeping first occurrences in input order."""
    _, first = np.unique(triples, axis=0, return_index=True)
    return triples[np.sort(first)]


# ---------------------------------------------------------------------------
# Binary cache


def source_checksum(paths: Iterable[str | os.PathLike | None], fmt: str) -> bytes:
    h = hashlib.sha256(fmt.encode())
    for path in paths:
        h.update(b"\0")
        if path is not None:
            with open(path, "rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
    return h.digest()


def save_graph(
    path: str | os.PathLike,
    data: DatasetSplits,
    source: bytes = b"\0" * 32,
    echo: dict | None = None,
) -> None:
    """Write the SGKG1 cache: header, source checksum, arrays, JSON trailer."""
    g = data.graph
    meta = json.dumps(
        {
            "format_version": GRAPH_FORMAT_VERSION,
            "entity_labels": data.entity_labels,
            "relation_labels": data.relation_labels,
            "config": echo or {},
        },
        sort_keys=True,
    ).encode()
    header = _HEADER.pack(
        GRAPH_FORMAT_VERSION,
        g.num_entities,
        g.num_relations,
        len(data.train),
        len(data.valid),
        len(data.test),
        len(g.neighbors),
        len(meta),
    )
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(GRAPH_MAGIC)
        fh.write(header)
        fh.write(source)
        for arr, dtype in (
            (data.train, "<i8"),
            (data.valid, "<i8"),
            (data.test, "<i8"),
            (g.indptr, "<i8"),
            (g.neighbors, "<i8"),
            (g.relations, "<i8"),
            (g.directions, "i1"),
            (g.degrees, "<i8"),
        ):
            fh.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
        fh.write(meta)
    os.replace(tmp, path)


def read_graph_header(path: str | os.PathLike) -> tuple[tuple[int, ...], bytes]:
    with open(path, "rb") as fh:
        head = fh.read(len(GRAPH_MAGIC) + _HEADER.size + 32)
    reader = BinaryReader(head, path)
    reader.expect(GRAPH_MAGIC, "graph cache")
    counts = _HEADER.unpack(reader.take(_HEADER.size, "header"))
    return counts, bytes(reader.take(32, "source checksum"))


def load_graph(path: str | os.PathLike) -> DatasetSplits:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = BinaryReader(buf, path)
    r.expect(GRAPH_MAGIC, "graph cache")
    version, n_ent, n_rel, n_train, n_valid, n_test, nnz, meta_len = _HEADER.unpack(
        r.take(_HEADER.size, "header")
    )
    if version != GRAPH_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported graph format version {version}")
    r.take(32, "source checksum")
    train = r.array("<i8", (n_train, 3), "train triples")
    valid = r.array("<i8", (n_valid, 3), "valid triples")
    test = r.array("<i8", (n_test, 3), "test triples")
    indptr = r.array("<i8", (n_ent + 1,), "indptr")
    neighbors = r.array("<i8", (nnz,), "neighbors")
    relations = r.array("<i8", (nnz,), "relations")
    directions = r.array("i1", (nnz,), "directions")
    degrees = r.array("<i8", (n_ent,), "degrees")
    try:
        meta = json.loads(bytes(r.take(meta_len, "metadata")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata: {exc}") from None
    graph = Graph(n_ent, n_rel, train, indptr, neighbors, relations, directions, degrees)
    return DatasetSplits(graph, train, valid, test, meta["entity_labels"], meta["relation_labels"])


def load_or_ingest(
    cache_path: str | os.PathLike,
    train_path,
    valid_path=None,
    test_path=None,
    fmt: str = "ids",
    **kwargs,
) -> DatasetSplits:
    """Reuse ``cache_path`` if its recorded source checksum matches, else rebuild it."""
    source = source_checksum((train_path, valid_path, test_path), fmt)
    if os.path.exists(cache_path):
        try:
            _, cached = read_graph_header(cache_path)
        except FormatError:
            cached = None
        if cached == source:
            logger.info("graph cache %s is up to date", cache_path)
            return load_graph(cache_path)
        logger.info("graph cache %s is stale; rebuilding", cache_path)
    data = ingest(train_path, valid_path, test_path, fmt, **kwargs)
    save_graph(cache_path, data, source)
    return data


def from_arrays(
    train: Sequence,
    valid: Sequence = (),
    test: Sequence = (),
    num_entities: int | None = None,
    num_relations: int | None = None,
) -> DatasetSplits:
    """Build splits directly from in-memory id triples."""
    arrays = [np.asarray(s, dtype=np.int64).reshape(-1, 3) for s in (train, valid, test)]
    everything = np.concatenate(arrays)
    if len(arrays[0]) == 0:
        raise FormatError("no triples")
    if num_entities is None:
        num_entities = int(everything[:, [0, 2]].max()) + 1
    if num_relations is None:
        num_relations = int(everything[:, 1].max()) + 1
    _check_ranges(everything, num_entities, num_relations)
    graph = Graph.from_triples(arrays[0], num_entities, num_relations)
    return DatasetSplits(graph, *arrays)
