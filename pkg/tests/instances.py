"""Graph instances and small drivers shared by the test modules."""

from __future__ import annotations

import itertools

import networkx as nx
import numpy as np

from graphsketch.decode import Decoder, GlobalParams, build_stack
from graphsketch.graph_core import Graph


def from_nx(g: nx.Graph) -> Graph:
    g = nx.convert_node_labels_to_integers(g)
    return Graph(g.number_of_nodes(), g.edges())


def path(k: int) -> Graph:
    return Graph(k, [(i, i + 1) for i in range(k - 1)])


def cycle(k: int) -> Graph:
    return Graph(k, [(i, (i + 1) % k) for i in range(k)])


def complete(k: int) -> Graph:
    return Graph(k, itertools.combinations(range(k), 2))


def star(leaves: int) -> Graph:
    return Graph(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def dumbbell(k: int) -> Graph:
    """Two ``K_k`` joined by one bridge ``(k-1, k)``."""
    return from_nx(nx.barbell_graph(k, 0))


def cliques_with_matching(k: int, matched: int) -> Graph:
    edges = [(a + off, b + off) for off in (0, k) for a, b in itertools.combinations(range(k), 2)]
    edges += [(i, k + i) for i in range(matched)]
    return Graph(2 * k, edges)


def union_of_cliques(k: int, size: int, links: int = 1) -> Graph:
    """``k`` disjoint ``K_size`` joined in a ring by ``links`` edges each."""
    edges = [(a + c * size, b + c * size) for c in range(k) for a, b in itertools.combinations(range(size), 2)]
    if k > 1:
        for c in range(k):
            nxt = (c + 1) % k
            edges += [(c * size + t, nxt * size + (t + 1) % size) for t in range(links)]
    return Graph(k * size, sorted(set(tuple(sorted(e)) for e in edges)))


def connected_gnp(n: int, p: float, seed: int) -> Graph:
    """``G(n, p)`` conditioned on being connected (rejection with seed walk)."""
    s = seed
    while True:
        g = nx.gnp_random_graph(n, p, seed=s)
        if nx.is_connected(g):
            return from_nx(g)
        s += 10_000


def bounded_degree(n: int, degree: int, seed: int) -> Graph:
    return from_nx(nx.random_regular_graph(degree, n, seed=seed))


def run_variant(g: Graph, variant: str, seed: bytes, **overrides):
    """Insert ``g`` into fresh sketches and decode; returns ``(H, decoder)``."""
    params = GlobalParams(n=g.n, variant=variant, **overrides)
    nodes, stack = build_stack(params, seed)
    idx = g.edge_indices()
    stack.apply_updates(idx, np.ones(len(idx), dtype=np.int64))
    dec = Decoder(params, nodes, stack)
    return dec.run(), dec
