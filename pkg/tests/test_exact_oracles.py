import itertools

import networkx as nx
import numpy as np
import pytest

from graphsketch.exact_oracles import (
    INFINITE,
    DegreeTooLow,
    DimensionMismatch,
    EdgeAbsent,
    all_pairs_resistance,
    decompose,
    edge_resistances,
    exact_edge_connectivity,
    exact_effective_resistance,
    heavy_edges_brute_force,
    induced_resistance_diameter,
    is_spectral_sparsifier,
    pseudo_inverse,
)
from graphsketch.graph_core import EdgeKey, Graph, WeightedGraph, incidence_row, laplacian
from graphsketch.prg import Allocator, PrgChain
from graphsketch.sketches import HeavyHitterSketch, heavy_hitter_width

from instances import cliques_with_matching, complete, connected_gnp, cycle, path, star


def test_resistance_examples():
    assert exact_effective_resistance(path(3), 0, 2) == pytest.approx(2.0, abs=1e-12)
    assert exact_effective_resistance(complete(3), 0, 1) == pytest.approx(2 / 3, abs=1e-12)
    assert exact_effective_resistance(complete(5), 1, 3) == pytest.approx(0.4, abs=1e-12)
    assert exact_effective_resistance(path(3), 1, 1) == 0.0


def test_disconnected_resistance_is_infinite_variant():
    g = Graph(4, [(0, 1), (2, 3)])
    assert exact_effective_resistance(g, 0, 3) is INFINITE
    assert not isinstance(INFINITE, float)
    assert np.isfinite(exact_effective_resistance(g.to_weighted(1.0), 0, 3))


def test_pseudo_inverse_contract():
    g = connected_gnp(20, 0.3, 2)
    k = laplacian(g)
    pinv = pseudo_inverse(k).matrix
    assert np.linalg.norm(k @ pinv @ k - k) <= 1e-6 * np.linalg.norm(k)
    assert np.allclose(pinv, pinv.T)


def test_spectral_sparsifier_examples():
    g = connected_gnp(12, 0.5, 0)
    assert is_spectral_sparsifier(g, g, 0.01)
    assert not is_spectral_sparsifier(g, g.to_weighted().scaled(2.0), 0.5)
    with pytest.raises(DimensionMismatch):
        is_spectral_sparsifier(g, complete(5), 0.5)


def leverage_sample(g: Graph, eps: float, c: float, rng) -> WeightedGraph:
    """Offline importance sampling by effective resistance."""
    res = edge_resistances(g)
    out = {}
    for e, r in res.items():
        p = min(1.0, c * r * np.log(g.n) / eps ** 2)
        if rng.random() < p:
            out[e] = 1.0 / p
    return WeightedGraph(g.n, out)


def test_offline_leverage_sample_of_k10_verifies():
    g = complete(10)
    rng = np.random.default_rng(5)
    # oversampling chosen so that p_e < 1 and sampling actually happens
    samples = [leverage_sample(g, 0.5, 0.5, rng) for _ in range(50)]
    assert any(len(h) < len(g) for h in samples)
    rate = np.mean([is_spectral_sparsifier(g, h, 0.5) for h in samples])
    assert rate >= 0.9


def test_edge_connectivity_examples():
    two_triangles = Graph(6, [(0, 1), (1, 2), (0, 2), (3, 4), (4, 5), (3, 5), (2, 3)])
    assert exact_edge_connectivity(two_triangles, (2, 3)) == 1
    assert exact_edge_connectivity(complete(4), (0, 1)) == 3
    assert exact_edge_connectivity(cycle(4), (0, 1)) == 2
    with pytest.raises(EdgeAbsent):
        exact_edge_connectivity(cycle(4), (0, 2))


def _hh_for(g: Graph, eta: float, seed: bytes = b"hh") -> HeavyHitterSketch:
    hh = HeavyHitterSketch(g.n, heavy_hitter_width(eta), 5, Allocator(PrgChain.create(seed)))
    idx = g.edge_indices()
    hh.update(idx, np.ones(len(idx), dtype=np.int64))
    return hh


def test_heavy_edges_brute_force_examples():
    beta = 0.5
    eta = 0.5 * np.sqrt(beta / 3)
    s5 = star(5)
    found = heavy_edges_brute_force(_hh_for(s5, eta), s5.to_weighted(), beta)
    assert set(s5.edges) <= found

    k20 = complete(20)
    found = heavy_edges_brute_force(_hh_for(k20, eta), k20.to_weighted(), beta)
    heavy = {e for e, r in edge_resistances(k20).items() if r >= beta}
    assert heavy <= found and len(found) < len(k20)

    empty = Graph(6)
    assert heavy_edges_brute_force(_hh_for(empty, eta), empty.to_weighted(1.0), beta) == set()


def _adj(g: Graph) -> np.ndarray:
    adj = np.zeros((g.n, g.n))
    for e in g.edges:
        adj[e.u, e.v] = adj[e.v, e.u] = 1
    return adj


def test_decompose_two_cliques_with_matching():
    # min degree 19 caps d_min at 1.9; the whole graph has diameter 0.32,
    # so a radius below that is what forces the split
    g = cliques_with_matching(20, 5)
    parts = decompose(g, 1.9, 0.25)
    assert sorted(map(tuple, parts)) == [tuple(range(20)), tuple(range(20, 40))]
    adj = _adj(g)
    for p in parts:
        assert induced_resistance_diameter(adj, p) <= 0.25


def test_decompose_single_clique_and_degree_check():
    assert decompose(complete(10), 0.9, 1.0) == [list(range(10))]
    with pytest.raises(DegreeTooLow):
        decompose(path(5), 1.0, 1.0)


def test_resistance_is_a_metric():
    rng = np.random.default_rng(1)
    for t in range(100):
        n = int(rng.integers(3, 31))
        r = all_pairs_resistance(connected_gnp(n, 0.3, t))
        assert np.allclose(r, r.T)
        off = ~np.eye(n, dtype=bool)
        assert (r[off] > 0).all() and np.all(np.diag(r) == 0)
        # r[i, k] <= r[i, j] + r[j, k] for all triples
        assert (r[:, None, :] <= r[:, :, None] + r[None, :, :] + 1e-9).all()


def small_graphs():
    rng = np.random.default_rng(3)
    for t in range(60):
        n = int(rng.integers(3, 13))
        yield connected_gnp(n, float(rng.uniform(0.25, 0.7)), t)


def test_rayleigh_monotonicity_exhaustive():
    for g in small_graphs():
        base = all_pairs_resistance(g)
        bridges = {EdgeKey(*e) for e in nx.bridges(nx.Graph([tuple(e) for e in g.edges]))}
        for e in g.edges:
            if e in bridges:
                continue
            h = g.copy()
            h.delete(e)
            assert (all_pairs_resistance(h) >= base - 1e-9).all()


def test_energy_identities():
    rng = np.random.default_rng(4)
    for t in range(30):
        g = connected_gnp(int(rng.integers(4, 25)), 0.35, 100 + t)
        n = g.n
        pinv = pseudo_inverse(laplacian(g)).matrix
        u, v = rng.choice(n, 2, replace=False)
        b = incidence_row(EdgeKey(int(u), int(v)), n)
        r = b @ pinv @ b
        phi = pinv @ b / r
        if u > v:
            phi = -phi
        energy = sum((phi[e.u] - phi[e.v]) ** 2 for e in g.edges)
        assert energy == pytest.approx(1 / r, rel=1e-6)
        assert phi[u] - phi[v] == pytest.approx(1.0, abs=1e-9)

        # regularised version: complete-graph regulariser gamma (I - J / n)
        gamma = float(rng.uniform(0.1, 2))
        k = laplacian(g) + gamma * (np.eye(n) - np.ones((n, n)) / n)
        kp = pseudo_inverse(k).matrix
        r_g = b @ kp @ b
        phi = kp @ b / r_g
        energy = sum((phi[e.u] - phi[e.v]) ** 2 for e in g.edges) + gamma * np.sum((phi - phi.mean()) ** 2)
        assert energy == pytest.approx(1 / r_g, rel=1e-6)


def test_cross_potential_bounded_by_resistance():
    for t in range(20):
        g = connected_gnp(int(5 + t % 11), 0.4, 200 + t)
        pinv = pseudo_inverse(laplacian(g)).matrix
        r = all_pairs_resistance(g)
        pairs = list(itertools.combinations(range(g.n), 2))
        for a, b in pairs:
            ba = incidence_row(EdgeKey(a, b), g.n)
            cross = np.array([ba @ pinv @ incidence_row(EdgeKey(c, d), g.n) for c, d in pairs])
            assert (np.abs(cross) <= r[a, b] + 1e-9).all()


def contracted_resistance(g: Graph, members, v: int) -> float:
    members = sorted(members)
    keep = [x for x in range(g.n) if x not in members]
    mapping = {x: i + 1 for i, x in enumerate(keep)}
    mapping.update({x: 0 for x in members})
    w: dict = {}
    for e in g.edges:
        a, b = mapping[e.u], mapping[e.v]
        if a != b:
            key = EdgeKey(a, b)
            w[key] = w.get(key, 0.0) + 1.0
    return exact_effective_resistance(WeightedGraph(len(keep) + 1, w), 0, mapping[v])


def test_contraction_bound_exhaustive():
    checked = 0
    for g in small_graphs():
        r = all_pairs_resistance(g)
        n = g.n
        for size in (2, 3):
            for members in itertools.combinations(range(n), size):
                diam = max(r[a, b] for a, b in itertools.combinations(members, 2))
                beta = diam
                for u in members:
                    for v in range(n):
                        if v in members or r[u, v] < beta:
                            continue
                        bound = r[u, v] * (1 - beta / r[u, v]) ** 2
                        assert contracted_resistance(g, members, v) >= bound - 1e-9
                        checked += 1
    assert checked > 1000


def test_ball_inclusion_under_domination():
    rng = np.random.default_rng(6)
    for t in range(20):
        g = connected_gnp(int(rng.integers(6, 20)), 0.4, 300 + t)
        big_gamma = float(rng.uniform(1.5, 8))
        # K / Gamma <= K~ <= K, hence R <= R~ <= Gamma R
        coarse = WeightedGraph(g.n, {e: float(rng.uniform(1 / big_gamma, 1)) for e in g.edges})
        r, rc = all_pairs_resistance(g), all_pairs_resistance(coarse)
        assert (rc <= big_gamma * r + 1e-9).all()
        for radius in (0.2, 0.5, 1.0, 2.0):
            for u in range(g.n):
                inner = set(np.flatnonzero(r[u] <= radius / big_gamma))
                outer = set(np.flatnonzero(rc[u] <= radius))
                assert inner <= outer
