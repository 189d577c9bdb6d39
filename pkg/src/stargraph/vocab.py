"""Anchor selection and per-entity subgraph token sets.

Every entity is described by ``k`` anchor tokens (nearest anchors by BFS
hop, ties by anchor ordinal), ``m`` neighbor tokens (one-hop neighbors by
degree desc, id asc) and the entity itself as center. Missing slots hold
``PAD``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

from .binio import BinaryReader
from .errors import ChecksumError, FormatError, StarGraphError
from .graph import Graph

# Prefer OpenMP over TBB: older system TBB builds are rejected with a warning.
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "tbb", "workqueue"]

logger = logging.getLogger(__name__)

PAD = -1
DEFAULT_MAX_HOPS = 10
VOCAB_MAGIC = b"SGVC1"
VOCAB_FORMAT_VERSION = 1
_HEADER = struct.Struct("<7Q")


def default_num_anchors(num_entities: int) -> int:
    """0.4% of the entities, at least one, always fewer than all."""
    return max(1, min(math.ceil(0.004 * num_entities), num_entities - 1))


@dataclass(frozen=True, eq=False)
class AnchorSet:
    anchors: np.ndarray  # entity ids ordered by (degree desc, id asc)
    ordinal_of: np.ndarray  # entity id -> anchor ordinal, PAD if not an anchor

    def __len__(self) -> int:
        return len(self.anchors)

    @property
    def anchor_index(self) -> dict[int, int]:
        return {int(e): i for i, e in enumerate(self.anchors)}


def select_anchors(graph: Graph, count: int) -> AnchorSet:
    if not 0 < count < graph.num_entities:
        raise StarGraphError(
            f"anchor count must satisfy 0 < count < num_entities={graph.num_entities}, got {count}"
        )
    order = np.lexsort((np.arange(graph.num_entities), -graph.degrees))
    anchors = order[:count].astype(np.int64)
    ordinal_of = np.full(graph.num_entities, PAD, dtype=np.int64)
    ordinal_of[anchors] = np.arange(count)
    return AnchorSet(anchors, ordinal_of)


def sample_anchors(
    graph: Graph, anchors: AnchorSet, u: int, k: int, max_hops: int = DEFAULT_MAX_HOPS
) -> np.ndarray:
    """First ``k`` anchors met by a level-synchronous BFS from ``u``.

    Each BFS level is visited in (degree desc, id asc) order; ``u`` itself is
    level 0. Unfilled slots are ``PAD``. This is the per-entity reference;
    ``build_vocabulary`` computes the same thing for all entities at once.
    """
    if k < 1:
        raise StarGraphError(f"k must be >= 1, got {k}")
    u = graph._check_entity(u)
    out: list[int] = []
    visited = {u}
    level = [u]
    hop = 0
    while level:
        level.sort(key=lambda x: (-graph.degrees[x], x))
        for x in level:
            if anchors.ordinal_of[x] != PAD:
                out.append(int(anchors.ordinal_of[x]))
                if len(out) == k:
                    return np.array(out, dtype=np.int64)
        if hop == max_hops:
            break
        nxt = []
        for x in level:
            for y in graph.neighbor_ids(x).tolist():
                if y not in visited:
                    visited.add(y)
                    nxt.append(y)
        level = nxt
        hop += 1
    return np.array(out + [PAD] * (k - len(out)), dtype=np.int64)


def sample_neighbors(graph: Graph, u: int, m: int) -> np.ndarray:
    """First ``m`` distinct one-hop neighbors of ``u`` by (degree desc, id asc)."""
    if m < 0:
        raise StarGraphError(f"m must be >= 0, got {m}")
    u = graph._check_entity(u)
    out: list[int] = []
    for y in graph.neighbor_ids(u).tolist():  # already in sampling order
        if len(out) == m:
            break
        if y != u and (not out or out[-1] != y):
            out.append(y)
    return np.array(out + [PAD] * (m - len(out)), dtype=np.int64)


# ---------------------------------------------------------------------------
# Whole-graph kernels


@numba.njit(cache=True, parallel=True)
def _nearest_anchors(indptr, neighbors, ordinal_of, k, max_hops):
    # Propagates truncated top-k anchor lists one hop per round. Entries in a
    # row are appended in (hop, ordinal) order; entries added in the previous
    # round occupy tok[w, start[w]:count[w]]. A neighbor's truncated list is
    # sufficient: any anchor it dropped is preceded by k anchors that also
    # precede it from v's side.
    n = len(indptr) - 1
    tok = np.full((n, k), -1, dtype=np.int32)
    count = np.zeros(n, dtype=np.int32)
    for v in range(n):
        if ordinal_of[v] >= 0:
            tok[v, 0] = ordinal_of[v]
            count[v] = 1
    start = np.zeros(n, dtype=np.int32)
    prev = count.copy()
    for hop in range(1, max_hops + 1):
        added = 0
        for v in numba.prange(n):
            have = prev[v]
            need = k - have
            if need <= 0:
                continue
            best = np.empty(need, dtype=np.int32)
            nbest = 0
            for e in range(indptr[v], indptr[v + 1]):
                w = neighbors[e]
                for j in range(start[w], prev[w]):
                    a = tok[w, j]
                    if nbest == need and a >= best[nbest - 1]:
                        continue
                    dup = False
                    for i in range(have):
                        if tok[v, i] == a:
                            dup = True
                            break
                    if dup:
                        continue
                    # sorted insert into best[:nbest]
                    pos = nbest
                    while pos > 0 and best[pos - 1] > a:
                        pos -= 1
                    if pos > 0 and best[pos - 1] == a:
                        continue
                    last = nbest if nbest < need else need - 1
                    for i in range(last, pos, -1):
                        best[i] = best[i - 1]
                    best[pos] = a
                    if nbest < need:
                        nbest += 1
            for i in range(nbest):
                tok[v, have + i] = best[i]
            count[v] = have + nbest
            added += nbest
        for v in range(n):
            start[v] = prev[v]
            prev[v] = count[v]
        if added == 0:
            break
    return tok


@numba.njit(cache=True)
def _degree_ordered_neighbors(indptr, neighbors, m):
    n = len(indptr) - 1
    out = np.full((n, m), -1, dtype=np.int64)
    for v in range(n):
        c = 0
        for e in range(indptr[v], indptr[v + 1]):
            if c == m:
                break
            y = neighbors[e]
            if y == v or (c > 0 and out[v, c - 1] == y):
                continue
            out[v, c] = y
            c += 1
    return out


# ---------------------------------------------------------------------------
# Vocabulary


@dataclass(eq=False)
class Vocabulary:
    """Per-entity token sets. Row ``e`` describes entity ``e`` (its own center)."""

    anchor_tokens: np.ndarray  # [N, k] anchor ordinals or PAD
    neighbor_tokens: np.ndarray  # [N, m] entity ids or PAD
    anchors: np.ndarray  # [|A|] anchor ordinal -> entity id
    graph_checksum: bytes
    echo: dict | None = None

    @property
    def num_entities(self) -> int:
        return len(self.anchor_tokens)

    @property
    def k(self) -> int:
        return self.anchor_tokens.shape[1]

    @property
    def m(self) -> int:
        return self.neighbor_tokens.shape[1]

    @property
    def num_anchors(self) -> int:
        return len(self.anchors)

    @property
    def center(self) -> np.ndarray:
        return np.arange(self.num_entities, dtype=np.int64)

    @property
    def pad_mask(self) -> np.ndarray:
        """True at padded slots, laid out as (anchors, neighbors, center)."""
        return np.concatenate(
            [
                self.anchor_tokens == PAD,
                self.neighbor_tokens == PAD,
                np.zeros((self.num_entities, 1), dtype=bool),
            ],
            axis=1,
        )

    def entry(self, e: int) -> tuple[list[int], list[int], int]:
        """Tokens of entity ``e`` as entity ids: (anchors, neighbors, center)."""
        if not 0 <= e < self.num_entities:
            raise StarGraphError(f"entity id {e} out of range [0, {self.num_entities})")
        anchors = [int(self.anchors[a]) if a != PAD else PAD for a in self.anchor_tokens[e]]
        return anchors, self.neighbor_tokens[e].tolist(), int(e)

    def format_entry(self, e: int) -> str:
        anchors, neighbors, center = self.entry(e)

        def fmt(xs):
            return ",".join("-" if x == PAD else str(x) for x in xs)

        return f"{e}: {fmt(anchors)} | {fmt(neighbors)} | {center}"

    def dump_text(self, fh) -> None:
        for e in range(self.num_entities):
            fh.write(self.format_entry(e) + "\n")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            np.array_equal(self.anchor_tokens, other.anchor_tokens)
            and np.array_equal(self.neighbor_tokens, other.neighbor_tokens)
            and np.array_equal(self.anchors, other.anchors)
            and self.graph_checksum == other.graph_checksum
        )

    __hash__ = None


def build_vocabulary(
    graph: Graph,
    anchors: AnchorSet,
    k: int,
    m: int,
    max_hops: int = DEFAULT_MAX_HOPS,
    echo: dict | None = None,
) -> Vocabulary:
    if k < 1 or m < 0:
        raise StarGraphError(f"need k >= 1 and m >= 0, got k={k}, m={m}")
    if len(anchors.ordinal_of) != graph.num_entities:
        raise StarGraphError("anchor set was built on a different graph")
    anchor_tokens = _nearest_anchors(
        graph.indptr, graph.neighbors, anchors.ordinal_of, k, max_hops
    ).astype(np.int64)
    neighbor_tokens = _degree_ordered_neighbors(graph.indptr, graph.neighbors, m)
    logger.info(
        "vocabulary: %d entities, %.1f%% anchor slots padded, %.1f%% neighbor slots padded",
        graph.num_entities,
        100 * np.mean(anchor_tokens == PAD),
        100 * np.mean(neighbor_tokens == PAD) if m else 0.0,
    )
    return Vocabulary(anchor_tokens, neighbor_tokens, anchors.anchors.copy(), graph.checksum(), echo)


def _record_dtype(k: int, m: int) -> np.dtype:
    return np.dtype([("anchors", "<i4", (k,)), ("neighbors", "<i8", (m,)), ("center", "<i8")])


def save_vocabulary(path: str | os.PathLike, vocab: Vocabulary) -> None:
    echo = json.dumps(vocab.echo or {}, sort_keys=True).encode()
    n, k, m = vocab.num_entities, vocab.k, vocab.m
    records = np.empty(n, dtype=_record_dtype(k, m))
    records["anchors"] = vocab.anchor_tokens
    records["neighbors"] = vocab.neighbor_tokens
    records["center"] = vocab.center
    tmp = Path(f"{path}.tmp")
    with open(tmp, "wb") as fh:
        fh.write(VOCAB_MAGIC)
        fh.write(_HEADER.pack(VOCAB_FORMAT_VERSION, vocab.num_anchors, k, m, n, len(echo), 0))
        fh.write(vocab.graph_checksum)
        fh.write(echo)
        fh.write(np.ascontiguousarray(vocab.anchors, dtype="<i8").tobytes())
        fh.write(records.tobytes())
    os.replace(tmp, path)


def load_vocabulary(path: str | os.PathLike, graph: Graph | None = None) -> Vocabulary:
    with open(path, "rb") as fh:
        buf = fh.read()
    r = BinaryReader(buf, path)
    r.expect(VOCAB_MAGIC, "vocabulary")
    version, num_anchors, k, m, n, echo_len, _ = _HEADER.unpack(r.take(_HEADER.size, "header"))
    if version != VOCAB_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported vocabulary format version {version}")
    checksum = bytes(r.take(32, "graph checksum"))
    try:
        echo = json.loads(bytes(r.take(echo_len, "config echo")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt config echo: {exc}") from None
    anchors = r.array("<i8", (num_anchors,), "anchor list")
    dtype = _record_dtype(k, m)
    offset = r.pos
    raw = r.take(n * dtype.itemsize, f"{n} entity records")
    records = np.frombuffer(raw, dtype=dtype)
    if not np.array_equal(records["center"], np.arange(n)):
        bad = int(np.flatnonzero(records["center"] != np.arange(n))[0])
        raise FormatError(f"{path}: record {bad} at offset {offset + bad * dtype.itemsize} is corrupt")
    if not r.at_end():
        raise FormatError(f"{path}: trailing bytes at offset {r.pos}")
    vocab = Vocabulary(
        records["anchors"].astype(np.int64).reshape(n, k),
        records["neighbors"].astype(np.int64).reshape(n, m),
        anchors,
        checksum,
        echo,
    )
    if graph is not None:
        check_vocabulary(vocab, graph)
    return vocab


def check_vocabulary(vocab: Vocabulary, graph: Graph) -> None:
    if vocab.graph_checksum != graph.checksum() or vocab.num_entities != graph.num_entities:
        raise ChecksumError(
            f"vocabulary was built for graph {vocab.graph_checksum.hex()[:12]}, "
            f"not {graph.checksum().hex()[:12]}"
        )


def file_digest(path: str | os.PathLike) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()
