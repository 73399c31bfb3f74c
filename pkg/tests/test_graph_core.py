import itertools

import networkx as nx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsketch.graph_core import (
    EdgeKey,
    Graph,
    NonZeroSum,
    StreamViolation,
    WeightedGraph,
    decompose_demand,
    edge_endpoints,
    edge_from_index,
    edge_index,
    incidence_matrix,
    incidence_row,
    laplacian,
    num_pairs,
    read_edge_list,
    write_edge_list,
)

from instances import complete


def test_incidence_rows():
    assert incidence_row(EdgeKey(0, 1), 3).tolist() == [1, -1, 0]
    assert incidence_row(EdgeKey(1, 2), 3).tolist() == [0, 1, -1]
    assert incidence_row(EdgeKey(0, 1), 3) @ np.ones(3) == 0


def test_edge_key_is_canonical():
    assert EdgeKey(3, 1) == EdgeKey(1, 3)
    assert tuple(EdgeKey(3, 1)) == (1, 3)
    with pytest.raises(ValueError):
        EdgeKey(2, 2)


def test_linear_index_is_colex_bijection():
    n = 40
    seen = sorted(edge_index(u, v) for u, v in itertools.combinations(range(n), 2))
    assert seen == list(range(num_pairs(n)))
    assert edge_index(0, 1) == 0
    assert edge_index(1, 2) == 2
    assert edge_index(2, 0) == 1


@given(st.integers(min_value=0, max_value=10**9))
def test_edge_index_round_trip(idx):
    u, v = edge_from_index(idx)
    assert 0 <= u < v
    assert edge_index(u, v) == idx
    eu, ev = edge_endpoints(np.array([idx]))
    assert (int(eu[0]), int(ev[0])) == (u, v)


def test_triangle_laplacian():
    lap = laplacian(complete(3))
    assert np.array_equal(lap, np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], dtype=float))


def test_empty_regularised_laplacian():
    assert np.array_equal(laplacian(WeightedGraph(2, {}, 0.5)), 0.5 * np.eye(2))


def test_gnp_laplacian_psd():
    # oracle: dense eigensolver
    g = Graph(8, nx.gnp_random_graph(8, 0.5, seed=1).edges())
    assert np.linalg.eigvalsh(laplacian(g)).min() >= -1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 50), st.floats(0.0, 3.0), st.integers(0, 2**31))
def test_laplacian_is_sum_of_rank_one_terms(n, gamma, seed):
    rng = np.random.default_rng(seed)
    g = nx.gnp_random_graph(n, 0.3, seed=seed)
    wg = WeightedGraph(n, {e: float(rng.uniform(0.1, 3)) for e in g.edges()}, gamma)
    expect = gamma * np.eye(n)
    for e, w in wg.edges.items():
        b = incidence_row(e, n)
        expect += w * np.outer(b, b)
    lap = laplacian(wg)
    assert np.allclose(lap, expect, atol=1e-12)
    assert np.allclose(lap @ np.ones(n), gamma * np.ones(n))
    # B^T applied to an edge indicator is that edge's row
    inc = incidence_matrix(wg)
    for k, e in enumerate(sorted(wg.edges, key=lambda e: e.linear_index)):
        ind = np.zeros(len(wg))
        ind[k] = 1
        assert np.array_equal(inc.T @ ind, incidence_row(e, n))


def test_graph_rejects_duplicates_and_absent_deletes():
    g = Graph(3, [(0, 1)])
    with pytest.raises(StreamViolation):
        g.insert(EdgeKey(0, 1))
    with pytest.raises(StreamViolation):
        g.delete(EdgeKey(1, 2))
    g.delete(EdgeKey(0, 1))
    assert len(g) == 0 and not g.degree.any()


def test_weighted_graph_validates():
    with pytest.raises(ValueError):
        WeightedGraph(3, {(0, 1): 0.0})
    with pytest.raises(ValueError):
        WeightedGraph(3, {(0, 5): 1.0})
    with pytest.raises(ValueError):
        WeightedGraph(3, {}, -1.0)


def test_decompose_demand_examples():
    assert decompose_demand([1, -1, 0]) == [(0, 1, 1.0)]
    assert decompose_demand([0, 0, 0]) == []
    terms = decompose_demand([2, -1, -1])
    assert sum(a for _, _, a in terms) == pytest.approx(2)
    with pytest.raises(NonZeroSum):
        decompose_demand([1, 1, -1])


def _reconstruct(terms, n):
    out = np.zeros(n)
    for s, t, a in terms:
        out[s] += a
        out[t] -= a
    return out


def test_decompose_demand_round_trips():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        sigma = rng.normal(size=n)
        sigma[rng.random(n) < 0.3] = 0
        sigma -= sigma.mean()
        terms = decompose_demand(sigma)
        assert len(terms) <= max(n - 1, 0)
        assert all(a > 0 for _, _, a in terms)
        assert np.allclose(_reconstruct(terms, n), sigma, atol=1e-9)
        assert abs(sum(a for _, _, a in terms) - np.abs(sigma).sum() / 2) <= 1e-9


def test_edge_list_round_trip():
    g = complete(5)
    text = "# header\n" + write_edge_list(g)
    back = read_edge_list(text.splitlines())
    assert back.n == 5 and back.edges == g.edges
