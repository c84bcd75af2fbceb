import numpy as np
import pytest
from scipy import stats as sps

from gmoe.errors import DataError
from gmoe.generator import Architecture, LatentOutput, init_params
from gmoe.kernels import KernelSpec
from gmoe.sampler import CommunityModel, SbmSpec, generate, realize, realize_community, sample_sbm


def test_sbm_edge_count_matches_expectation():
    rng = np.random.default_rng(0)
    spec = SbmSpec.four_block(16)
    edges = [sample_sbm(spec, rng).num_edges for _ in range(2000)]
    # blocks are random, so compare with the mixture mean
    pi, B = np.asarray(spec.pi), np.asarray(spec.B)
    assert spec.expected_edges() == pytest.approx(120 * pi @ B @ pi)
    se = np.std(edges) / np.sqrt(len(edges))
    assert abs(np.mean(edges) - spec.expected_edges()) < 4 * se


def test_two_block_preset():
    spec = SbmSpec.two_block()
    assert spec.n_nodes == 80 and spec.B[0][1] == 0.05
    g = sample_sbm(spec, np.random.default_rng(1))
    assert g.num_vertices == 80
    np.testing.assert_array_equal(g.adjacency, g.adjacency.T)


def test_sbm_validation():
    with pytest.raises(DataError):
        SbmSpec((0.5, 0.6), ((0.1, 0.1), (0.1, 0.1)), 5)
    with pytest.raises(DataError):
        SbmSpec((0.5, 0.5), ((0.1, 0.2), (0.3, 0.1)), 5)
    with pytest.raises(DataError):
        CommunityModel(np.ones((2, 2)), np.array([1.0]), 4)


def test_realize_retention_and_edges():
    rng = np.random.default_rng(2)
    n = 6
    q = np.full((1, n), 0.5)
    z = np.full((1, n, 2), 0.3)
    k = KernelSpec("rbf", eps=0.2)
    # identical embeddings give phi = 1 - eps, so edge rate 0.8 among kept nodes
    kept, edges, pairs = [], 0, 0
    for _ in range(3000):
        g = realize(LatentOutput(q=q, z=z), k, rng)
        kept.append(g.num_vertices)
        edges += g.num_edges
        pairs += g.num_vertices * (g.num_vertices - 1) // 2
    assert abs(np.mean(kept) - 3.0) < 4 * np.sqrt(n * 0.25 / 3000)
    assert abs(edges / pairs - 0.8) < 4 * np.sqrt(0.16 / pairs)


def test_realize_uses_adjacency_head():
    y = np.zeros((1, 4, 4))
    y[0, 0, 1] = y[0, 1, 0] = 1.0
    g = realize(LatentOutput(q=np.ones((1, 4)), y=y), KernelSpec(), np.random.default_rng(0), relabel=False)
    assert g.num_edges == 1 and g.adjacency[0, 1]


def test_large_graph_chunks_are_symmetric_and_calibrated():
    rng = np.random.default_rng(3)
    cm = CommunityModel(np.array([[0.1, 0.1], [2.0, 2.0]]), np.array([0.5, 0.5]), 1200)
    k = KernelSpec("rbf")
    g = realize_community(cm, k, rng)
    a = g.adjacency
    np.testing.assert_array_equal(a, a.T)
    assert not a.diagonal().any()
    P = cm.edge_matrix(k)
    expected = 1200 * 1199 / 2 * (0.25 * P[0, 0] + 0.25 * P[1, 1] + 0.5 * P[0, 1])
    assert abs(g.num_edges - expected) < 0.02 * expected


def test_community_assignment_frequencies():
    rng = np.random.default_rng(4)
    # disjoint cliques reveal the community sizes through component sizes
    k = KernelSpec("rbf", eps=1e-9)
    cm = CommunityModel(np.array([[0.0, 0.0], [30.0, 0.0]]), np.array([0.25, 0.75]), 400)
    g = realize_community(cm, k, rng, relabel=False)
    # each community is a clique, so a vertex's degree is its community size minus one
    deg = g.degrees()
    small = int(np.sum(deg < 200))
    assert set(np.unique(deg)) <= {small - 1, 400 - small - 1}
    assert sps.binomtest(small, 400, 0.25).pvalue > 1e-3


def test_generate_is_reproducible():
    params = init_params(Architecture(6, dim=2, input_dim=3), np.random.default_rng(0))
    a = generate(params, KernelSpec("rbf"), 5, np.random.default_rng(9))
    b = generate(params, KernelSpec("rbf"), 5, np.random.default_rng(9))
    assert all(np.array_equal(x.adjacency, y.adjacency) for x, y in zip(a, b))
    cp = init_params(Architecture(8, dim=2, input_dim=3, head="community", communities=2), np.random.default_rng(0))
    big = generate(cp, KernelSpec("rbf"), 1, np.random.default_rng(0), n_nodes=50)
    assert big[0].n == 50 and big[0].num_vertices == 50
