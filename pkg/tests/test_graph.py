import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stargraph.datasets import STAR_EDGES, random_graph, random_triples, star_graph
from stargraph.errors import FormatError, StarGraphError
from stargraph.graph import (
    Graph,
    build_adjacency,
    dedup_triples,
    from_arrays,
    ingest,
    load_graph,
    load_or_ingest,
    read_graph_header,
    save_graph,
)


def write(path, text):
    path.write_text(text)
    return path


def incidence_oracle(triples, n):
    deg = [0] * n
    for h, _, t in triples:
        deg[h] += 1
        deg[t] += 1
    return deg


# --- ingest ---------------------------------------------------------------


def test_ingest_three_line_file(tmp_path):
    data = ingest(write(tmp_path / "t.txt", "0 0 1\n1 0 2\n2 1 0\n"))
    assert data.num_entities == 3
    assert data.num_relations == 2
    assert data.graph.num_triples == 3
    assert data.train.tolist() == [[0, 0, 1], [1, 0, 2], [2, 1, 0]]


def test_ingest_empty_file(tmp_path):
    with pytest.raises(FormatError, match="no triples"):
        ingest(write(tmp_path / "t.txt", ""))


def test_malformed_line_reports_line_number(tmp_path):
    with pytest.raises(FormatError, match=r"t.txt:2"):
        ingest(write(tmp_path / "t.txt", "0 0 1\n0 1\n"))
    with pytest.raises(FormatError, match=r"t.txt:1"):
        ingest(write(tmp_path / "t.txt", "0 x 1\n"))


def test_declared_range_enforced(tmp_path):
    path = write(tmp_path / "t.txt", "0 0 5\n")
    with pytest.raises(FormatError, match="out of declared range"):
        ingest(path, num_entities=4)
    with pytest.raises(FormatError, match="relation id"):
        ingest(write(tmp_path / "r.txt", "0 3 1\n"), num_relations=2)
    assert ingest(path, num_entities=10).num_entities == 10


def test_label_mode_first_seen_order(tmp_path):
    train = write(tmp_path / "train.txt", "paris capital_of france\nlyon city_in france\n")
    test = write(tmp_path / "test.txt", "berlin capital_of germany\n")
    data = ingest(train, None, test, fmt="labels")
    assert data.entity_labels == ["paris", "france", "lyon", "berlin", "germany"]
    assert data.relation_labels == ["capital_of", "city_in"]
    assert data.train.tolist() == [[0, 0, 1], [2, 1, 1]]
    assert data.test.tolist() == [[3, 0, 4]]


def test_splits_preserved_and_train_only_adjacency(tmp_path):
    train = write(tmp_path / "train.txt", "0 0 1\n1 0 2\n")
    valid = write(tmp_path / "valid.txt", "2 0 3\n")
    test = write(tmp_path / "test.txt", "3 0 4\n0 0 4\n")
    data = ingest(train, valid, test)
    assert data.valid.tolist() == [[2, 0, 3]]
    assert data.test.tolist() == [[3, 0, 4], [0, 0, 4]]
    assert data.num_entities == 5
    # 3 and 4 only occur outside train: isolated in the graph
    assert data.graph.degree(3) == 0 and data.graph.degree(4) == 0
    assert data.graph.degree(2) == 1


# --- adjacency / degree -------------------------------------------------------


def test_star_degrees():
    g = star_graph().graph
    assert [g.degree(u) for u in range(6)] == [3, 1, 1, 3, 1, 1]


def test_star_adjacency_sorted_by_degree_then_id():
    g = star_graph().graph
    assert g.neighbor_ids(0).tolist() == [3, 1, 2]
    assert g.neighbor_ids(3).tolist() == [0, 4, 5]
    assert g.neighbor_ids(4).tolist() == [3]


def test_self_loop_counts_twice():
    g = Graph.from_triples([(0, 0, 0)], 1, 1)
    assert g.degree(0) == 2
    assert g.neighbor_ids(0).tolist() == [0]


def test_invalid_entity():
    g = star_graph().graph
    with pytest.raises(StarGraphError):
        g.degree(6)
    with pytest.raises(StarGraphError):
        g.adj(-1)


def test_degree_matches_incidence_oracle():
    data = random_graph(50, 200, seed=3)
    oracle = incidence_oracle(data.train.tolist(), 50)
    assert [data.graph.degree(u) for u in range(50)] == oracle


def test_direction_flags():
    g = Graph.from_triples([(0, 1, 2)], 3, 2)
    assert g.adj(0) == [(2, 1, 0)]
    assert g.adj(2) == [(0, 1, 1)]


@st.composite
def triple_sets(draw):
    n = draw(st.integers(1, 15))
    r = draw(st.integers(1, 3))
    rows = draw(
        st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, r - 1), st.integers(0, n - 1)), min_size=1, max_size=40)
    )
    return np.array(rows, dtype=np.int64), n, r


@settings(max_examples=150, deadline=None)
@given(triple_sets())
def test_adjacency_invariants(case):
    triples, n, r = case
    g = Graph.from_triples(triples, n, r)
    assert g.degrees.sum() == 2 * len(triples)
    assert g.degrees.tolist() == incidence_oracle(triples.tolist(), n)
    loops = np.bincount(triples[triples[:, 0] == triples[:, 2], 0], minlength=n)
    for u in range(n):
        nbrs = g.neighbor_ids(u).tolist()
        # with multiplicity, a self-loop is listed once but counted twice
        assert len(nbrs) + loops[u] == g.degree(u)
        for v in set(nbrs):
            assert u in g.neighbor_ids(v).tolist()
        keys = [(-g.degree(v), v) for v in nbrs]
        assert keys == sorted(keys)


# --- cache ------------------------------------------------------------------


def test_cache_round_trip(tmp_path):
    data = from_arrays(random_triples(40, 120, 4, seed=1), random_triples(40, 10, 4, seed=2), [], 40, 4)
    save_graph(tmp_path / "g.sgkg", data, echo={"note": "x"})
    again = load_graph(tmp_path / "g.sgkg")
    assert again == data
    assert again.graph.checksum() == data.graph.checksum()


def test_ingest_serialize_ingest_identical(tmp_path):
    triples = random_triples(30, 80, 3, seed=5)
    path = tmp_path / "t.txt"
    path.write_text("\n".join(" ".join(map(str, t)) for t in triples.tolist()) + "\n")
    first = ingest(path)
    save_graph(tmp_path / "g.sgkg", first)
    assert load_graph(tmp_path / "g.sgkg") == first == ingest(path)


def test_cache_magic_and_truncation(tmp_path):
    save_graph(tmp_path / "g.sgkg", star_graph())
    raw = (tmp_path / "g.sgkg").read_bytes()
    assert raw[:5] == b"SGKG1"
    (tmp_path / "cut.sgkg").write_bytes(raw[: len(raw) // 2])
    with pytest.raises(FormatError, match="offset"):
        load_graph(tmp_path / "cut.sgkg")
    (tmp_path / "bad.sgkg").write_bytes(b"XXXXX" + raw[5:])
    with pytest.raises(FormatError):
        load_graph(tmp_path / "bad.sgkg")


def test_cache_regenerated_on_source_change(tmp_path):
    src = write(tmp_path / "t.txt", "0 0 1\n")
    cache = tmp_path / "g.sgkg"
    first = load_or_ingest(cache, src)
    assert first.num_entities == 2
    _, digest = read_graph_header(cache)
    assert load_or_ingest(cache, src) == first
    write(src, "0 0 1\n1 0 2\n")
    second = load_or_ingest(cache, src)
    assert second.num_entities == 3
    assert read_graph_header(cache)[1] != digest


def test_dedup_keeps_first_occurrence():
    t = np.array([[1, 0, 2], [0, 0, 1], [1, 0, 2], [0, 0, 1], [3, 1, 3]])
    assert dedup_triples(t).tolist() == [[1, 0, 2], [0, 0, 1], [3, 1, 3]]


def test_duplicates_kept_by_default():
    g = Graph.from_triples([(0, 0, 1), (0, 0, 1)], 2, 1)
    assert g.degree(0) == 2


def test_build_adjacency_direct():
    indptr, nbrs, rels, dirs, deg = build_adjacency(np.array(STAR_EDGES), 6)
    assert indptr.tolist() == [0, 3, 4, 5, 8, 9, 10]
    assert deg.tolist() == [3, 1, 1, 3, 1, 1]
