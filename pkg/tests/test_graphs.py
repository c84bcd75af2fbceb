import itertools
from collections import Counter

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmoe.errors import DataError, MissingVertex, UnsupportedOrder
from gmoe.graphs import (
    ClassRegistry,
    EdgeCode,
    Graph,
    build_registry,
    canonical_search,
    classify,
    decode_codes,
    encode_matrices,
    induced_subgraph,
    permute_codes,
    relabel,
)


@pytest.fixture(scope="module")
def reg():
    return build_registry(6)


def atlas_counts():
    # the atlas lists every graph up to 7 vertices once per isomorphism class
    return Counter(g.number_of_nodes() for g in nx.graph_atlas_g())


def test_class_counts_match_atlas(reg):
    counts = atlas_counts()
    for p in range(2, 7):
        assert reg.num_classes(p) == counts[p]
    assert [reg.num_classes(p) for p in range(2, 7)] == [2, 4, 11, 34, 156]


@pytest.mark.parametrize("p", range(2, 7))
def test_class_sizes_partition_codes(reg, p):
    sizes = reg.table(p).sizes
    assert sizes.sum() == 2 ** (p * (p - 1) // 2)
    assert np.all(sizes >= 1)


def test_classes_ordered_by_edges(reg):
    cls = reg.classes(4)
    assert cls[0].num_edges == 0 and cls[-1].num_edges == 6
    assert [c.num_edges for c in cls] == sorted(c.num_edges for c in cls)


def test_class_sizes_are_labelled_copies(reg):
    # number of labelled graphs on p vertices isomorphic to H is p!/|Aut(H)|
    import math

    for c in reg.classes(5):
        g = nx.from_numpy_array(c.canonical_code.to_matrix().astype(int))
        aut = sum(1 for _ in nx.algorithms.isomorphism.GraphMatcher(g, g).isomorphisms_iter())
        assert c.class_size == math.factorial(5) // aut


def test_same_class_iff_isomorphic(reg):
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 2**10, size=60)
    cls = reg.classify_codes(5, codes)
    mats = decode_codes(5, codes)
    graphs = [nx.from_numpy_array(m.astype(int)) for m in mats]
    for i, j in itertools.combinations(range(len(codes)), 2):
        assert (cls[i] == cls[j]) == nx.is_isomorphic(graphs[i], graphs[j])


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**15 - 1), st.permutations(range(6)))
def test_class_invariant_under_relabelling(code, perm):
    reg = build_registry(6)
    moved = permute_codes(6, [code], perm)
    assert reg.classify_codes(6, [code])[0] == reg.classify_codes(6, moved)[0]


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**21 - 1), st.permutations(range(7)))
def test_sparse_canonical_form_is_invariant(code, perm):
    moved = int(permute_codes(7, [code], perm)[0])
    assert canonical_search(7, code)[0] == canonical_search(7, moved)[0]


def test_sparse_orders_match_dense_tables(reg):
    # the searched canonical form picks its own representative but must
    # induce the same partition and class sizes as the dense table
    big = build_registry(8, dense_order=4)
    rng = np.random.default_rng(1)
    codes = rng.integers(0, 2**15, size=40)
    sparse = [big.canonical(EdgeCode(6, int(c))) for c in codes]
    dense = reg.classify_codes(6, codes)
    for i, j in itertools.combinations(range(len(codes)), 2):
        assert (sparse[i][0] == sparse[j][0]) == (dense[i] == dense[j])
    for (_, size), cid in zip(sparse, dense):
        assert size == reg.table(6).sizes[cid]


def test_order_8_class_size():
    big = build_registry(8, dense_order=4)
    star = np.zeros((8, 8), dtype=bool)
    star[0, 1:] = star[1:, 0] = True
    # 8 choices of hub
    assert big.class_size(EdgeCode.from_matrix(star)) == 8
    assert big.class_size(EdgeCode(8, 0)) == 1


def test_edge_code_bit_layout():
    a = np.zeros((3, 3), dtype=bool)
    a[0, 2] = a[2, 0] = True
    # pairs (0,1), (0,2), (1,2) occupy bits 0, 1, 2
    assert EdgeCode.from_matrix(a).bits == 0b010
    assert EdgeCode(3, 0b010).hex() == "2"
    np.testing.assert_array_equal(EdgeCode(3, 0b010).to_matrix(), a)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 8).flatmap(lambda p: st.tuples(st.just(p), st.integers(0, 2 ** (p * (p - 1) // 2) - 1))))
def test_encode_decode_round_trip(pc):
    p, code = pc
    m = decode_codes(p, [code])
    assert int(encode_matrices(m)[0]) == code
    assert np.array_equal(m[0], m[0].T) and not m[0].diagonal().any()


def test_edge_code_range_checks():
    with pytest.raises(DataError):
        EdgeCode(3, 8)
    with pytest.raises(UnsupportedOrder):
        EdgeCode(9, 0)


def test_registry_order_limits():
    with pytest.raises(UnsupportedOrder):
        build_registry(9)
    with pytest.raises(UnsupportedOrder):
        build_registry(6).table(7)


def test_registry_dump_round_trip(tmp_path, reg):
    path = tmp_path / "reg.bin"
    reg.dump(path)
    back = ClassRegistry.load(path)
    for p in range(2, 7):
        np.testing.assert_array_equal(back.table(p).class_of, reg.table(p).class_of)
        np.testing.assert_array_equal(back.table(p).sizes, reg.table(p).sizes)
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(DataError):
        ClassRegistry.load(tmp_path / "bad.bin")


def test_graph_validation():
    with pytest.raises(DataError):
        Graph(np.ones((3, 3), dtype=bool), np.ones(3, dtype=bool))
    adj = np.zeros((3, 3), dtype=bool)
    adj[0, 1] = True
    with pytest.raises(DataError):
        Graph(adj, np.ones(3, dtype=bool))
    adj[1, 0] = True
    with pytest.raises(DataError):
        Graph(adj, np.array([True, False, True]))


def test_graph_is_immutable():
    g = Graph.complete(4)
    with pytest.raises(ValueError):
        g.adjacency[0, 1] = False


def test_graph_basics():
    g = Graph.from_edges(5, [(0, 1), (1, 2)], vertices=[0, 1, 2, 4])
    assert g.num_vertices == 4 and g.num_edges == 2
    np.testing.assert_array_equal(g.degrees(), [1, 2, 1, 0])
    c = g.compact()
    assert c.n == 4 and c.num_edges == 2
    assert Graph.complete(5).num_edges == 10


def test_relabel_and_induced_subgraph():
    g = Graph.from_edges(4, [(0, 1), (1, 2), (2, 3)])
    h = relabel(g, [3, 2, 1, 0])
    assert h.adjacency[3, 2] and h.adjacency[1, 0] and not h.adjacency[3, 0]
    assert induced_subgraph(g, [0, 1, 2]).bits == 0b101
    # order of W fixes the ranks
    assert induced_subgraph(g, [2, 1, 0]).bits == 0b101
    assert induced_subgraph(g, [0, 2, 1]).bits == 0b110
    missing = Graph.from_edges(4, [], vertices=[0, 1, 2])
    with pytest.raises(MissingVertex):
        induced_subgraph(missing, [0, 3, 1])


def test_classify_helper(reg):
    tri = EdgeCode(3, 0b111)
    assert classify(reg, tri) == reg.num_classes(3) - 1
