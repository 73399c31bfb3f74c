"""Recursive decoding of spectral sparsifiers from the per-node sketches.

The recursion tree alternates sparsify nodes and heavy-edge nodes.  A
sparsify node refines a coarse approximation obtained from its sparsify
child into a ``(1 +- eps)`` sparsifier by leverage-score bucketing of the
edges its heavy-edge children report.  A heavy-edge node peels low-degree
vertices, extracts low-connectivity edges, carves the vertex set into
small-resistance balls and runs heavy-hitter queries against electrical
potentials of the contracted coarse graph.

Three variants share the sketch layer:

``ballcarve``
    the full recursion with ball carving;
``brute``
    the same recursion, but each heavy-edge node queries every vertex pair
    against a dense pseudo-inverse;
``n32``
    a flat chain over regularisation levels with per-sampling-level
    peeling plus low-connectivity recovery (``Gamma = 2``).
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components
import scipy.sparse as sp

from .exact_oracles import heavy_edges_brute_force
from .graph_core import EdgeKey, WeightedGraph, edge_endpoints
from .prg import Allocator, PrgChain
from .resistance import build_embedding, contract, default_q, potentials_many, solve_laplacian_many
from .sketches import (
    DecodeFailure,
    ForestSketch,
    HeavyHitterSketch,
    NodeLayout,
    NodeSketch,
    SketchStack,
    find_low_connectivity_edges,
    flce_copies,
    heavy_hitter_width,
    spanning_forest,
)

log = logging.getLogger(__name__)

VARIANTS = ("ballcarve", "brute", "n32")
SPARSIFY, HEAVY = "sparsify", "heavy"


def log2n(n: int) -> float:
    return max(1.0, math.log2(max(n, 2)))


def levels_needed(ratio: float, base: float) -> int:
    """Smallest ``k >= 1`` with ``base**k >= ratio``."""
    k, p = 0, 1.0
    while p < ratio * (1 - 1e-12):
        p *= base
        k += 1
    return max(k, 1)


def pinned_gamma(n: int) -> float:
    """Power of two at least ``lambda_u / lambda_l``, giving a single sampling level."""
    return float(2 ** math.ceil(math.log2(max(n ** 3 / 4, 2))))


def default_gamma(n: int) -> float:
    """``n ** delta`` with ``delta = 1 / log log n``."""
    return max(2.0, n ** (1.0 / max(1.0, math.log2(log2n(n)))))


@dataclass(frozen=True)
class GlobalParams:
    n: int
    eps: float = 0.5
    gamma_base: float | None = None
    variant: str = "ballcarve"
    c_prime: float = 1.0
    d_threshold: float | None = None
    lambda_threshold: int | None = None
    beta: float | None = None
    q_jl: int | None = None
    q_ball: int | None = None
    c_flce: float = 200.0
    hh_width_cap: int | None = 256
    hh_depth: int = 5

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.n < 1:
            raise ValueError("n must be positive")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if self.gamma is not None and self.gamma <= 1:
            raise ValueError("Gamma must exceed 1")
        for name in ("c_prime", "d_threshold", "lambda_threshold", "beta", "q_jl", "q_ball"):
            val = getattr(self, name)
            if val is not None and not val > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def gamma(self) -> float:
        if self.variant == "n32":
            return 2.0
        return self.gamma_base if self.gamma_base is not None else pinned_gamma(self.n)

    @property
    def lam_u(self) -> float:
        return 2.0 * self.n

    @property
    def lam_l(self) -> float:
        return 8.0 / self.n ** 2

    @property
    def levels(self) -> int:
        """``Lambda = ceil(log_Gamma(lambda_u / lambda_l))``."""
        return levels_needed(self.lam_u / self.lam_l, self.gamma)

    @property
    def log_n(self) -> float:
        return log2n(self.n)

    def gamma_at(self, ell: int) -> float:
        return self.lam_u / self.gamma ** ell

    @property
    def heavy_beta(self) -> float:
        if self.beta is not None:
            return self.beta
        if self.variant == "n32":
            return self.eps ** 2 / (500 * self.gamma ** 3 * self.c_prime)
        return 1.0 / (500 * self.c_prime * self.eps ** -2 * self.gamma ** 3 * self.log_n)

    @property
    def degree_threshold(self) -> float:
        if self.d_threshold is not None:
            return self.d_threshold
        if self.variant == "n32":
            formula = math.sqrt(self.n) * self.log_n ** 2 / self.heavy_beta
        else:
            formula = self.n ** 0.4 * self.log_n ** 2
        return max(1.0, min(formula, self.n / 4))

    @property
    def connectivity_threshold(self) -> int:
        if self.lambda_threshold is not None:
            return int(self.lambda_threshold)
        if self.variant == "n32":
            return max(1, int(min(200 * math.sqrt(self.n), self.n / 4)))
        return max(1, int(self.degree_threshold))

    @property
    def recovery_capacity(self) -> int:
        return max(1, min(math.ceil(self.degree_threshold), self.n - 1))

    @property
    def embedding_rows(self) -> int:
        return self.q_jl or default_q(self.n)

    @property
    def ball_rows(self) -> int:
        return self.q_ball or self.embedding_rows

    def quality(self, ell: int) -> float:
        """Approximation factor ``C`` of the coarse sparsifier at a heavy-edge node."""
        if ell == 0:
            return self.gamma
        return self.gamma * (1 + self.eps) / (1 - self.eps)

    def heavy_eta(self, ell: int) -> float:
        return 0.5 * math.sqrt(self.heavy_beta / (3 * self.quality(ell)))

    def hh_width(self) -> int:
        # the worst eta over the tree fixes one width for every node
        return heavy_hitter_width(self.heavy_eta(1), self.hh_width_cap)


@dataclass
class TreeNode:
    id: int
    kind: str
    i: int
    ell: int
    parent: int
    rate: float
    children: list[int] = field(default_factory=list)

    @property
    def label(self) -> tuple[str, int, int]:
        return (self.kind, self.i, self.ell)

    def __str__(self) -> str:
        name = "Sparsify" if self.kind == SPARSIFY else "HeavyEdges"
        return f"{name}({self.i},{self.ell})#{self.id}"


def gamma_schedule(params: GlobalParams) -> list[float]:
    """``gamma(l) = lambda_u / Gamma**l`` for ``l = 0..Lambda``."""
    return [params.gamma_at(ell) for ell in range(params.levels + 1)]


MAX_TREE_NODES = 20_000


def tree_size(levels: int) -> int:
    """Node count of the recursion tree for ``Lambda = levels``, without building it."""

    @lru_cache(maxsize=None)
    def sparse(i: int, ell: int) -> int:
        below = sparse(i, ell - 1) if ell > 0 else 0
        return 1 + below + sum(heavy(j, ell + j - i) for j in range(i, levels + 1))

    @lru_cache(maxsize=None)
    def heavy(j: int, ell: int) -> int:
        return 1 + (sparse(j, ell - 1) if ell > 0 else 0)

    return sparse(0, levels + 1)


def build_tree(params: GlobalParams) -> list[TreeNode]:
    """Nodes in depth-first preorder; ``nodes[0]`` is the root ``Sparsify(0, Lambda+1)``."""
    if params.variant == "n32":
        return _build_chain(params)
    big = params.levels
    size = tree_size(big)
    if size > MAX_TREE_NODES:
        raise ValueError(f"Gamma={params.gamma:g} gives Lambda={big} and {size} tree nodes; "
                         f"use a larger Gamma (e.g. {pinned_gamma(params.n):g})")
    nodes: list[TreeNode] = []

    def add(kind, i, ell, parent, rate) -> int:
        node = TreeNode(len(nodes), kind, i, ell, parent, rate)
        nodes.append(node)
        if parent >= 0:
            nodes[parent].children.append(node.id)
        if kind == SPARSIFY:
            for j in range(i, big + 1):
                add(HEAVY, j, ell + j - i, node.id, params.gamma ** (i - j))
            if ell > 0:
                add(SPARSIFY, i, ell - 1, node.id, 1.0)
        elif ell > 0:
            add(SPARSIFY, i, ell - 1, node.id, 1.0)
        return node.id

    add(SPARSIFY, 0, big + 1, -1, 1.0)
    return nodes


def _build_chain(params: GlobalParams) -> list[TreeNode]:
    nodes = [TreeNode(0, SPARSIFY, 0, params.levels + 1, -1, 1.0)]
    for j in range(params.levels + 1):
        nodes.append(TreeNode(j + 1, HEAVY, j, 0, 0, params.gamma ** -j))
        nodes[0].children.append(j + 1)
    return nodes


def child_of(nodes: list[TreeNode], node: TreeNode, kind: str, i: int, ell: int) -> TreeNode | None:
    for c in node.children:
        if nodes[c].label == (kind, i, ell):
            return nodes[c]
    return None


def plan_layouts(params: GlobalParams, nodes: list[TreeNode]) -> list[NodeLayout]:
    """Which sketches each tree node holds under the chosen variant."""
    out = []
    lam = params.connectivity_threshold
    copies = flce_copies(lam, params.n, params.c_flce)
    for node in nodes:
        common = dict(kind=node.kind, level=node.i, reg_level=node.ell, parent=node.parent, rate=node.rate)
        if node.kind == SPARSIFY:
            out.append(NodeLayout(**common))
        elif params.variant == "brute":
            out.append(NodeLayout(**common, hh_width=params.hh_width(), hh_depth=params.hh_depth))
        elif params.variant == "n32":
            out.append(NodeLayout(**common, recovery=params.recovery_capacity,
                                  flce_lambda=lam, flce_copies=copies))
        else:
            out.append(NodeLayout(**common, forest=True, recovery=params.recovery_capacity,
                                  flce_lambda=lam, flce_copies=copies,
                                  hh_width=params.hh_width(), hh_depth=params.hh_depth))
    return out


def prg_for(seed: bytes, n: int) -> PrgChain:
    return PrgChain.create(seed, output_bits=1 << 24)


def build_stack(params: GlobalParams, seed: bytes, debug: bool = False) -> tuple[list[TreeNode], SketchStack]:
    nodes = build_tree(params)
    layouts = plan_layouts(params, nodes)
    alloc = Allocator(prg_for(seed, params.n))
    return nodes, SketchStack.build(params.n, seed, params.gamma, layouts, alloc, debug)


@dataclass
class Partitioning:
    parts: list[tuple[int, ...]]
    centers: list[int]
    leftover: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.parts)

    @property
    def non_singleton(self) -> int:
        return sum(len(p) > 1 for p in self.parts)


def components_from_forest(n: int, forest) -> np.ndarray:
    idx = np.array(sorted(e.linear_index for e in forest), dtype=np.int64)
    u, v = edge_endpoints(idx)
    adj = sp.coo_matrix((np.ones(len(idx)), (u, v)), shape=(n, n))
    return connected_components(adj, directed=False)[1]


def ball_carving(forest: ForestSketch, removed, r: float, coarse: WeightedGraph,
                 q: int | None = None, seed: bytes = b"", label: str = "ball") -> Partitioning:
    """Greedy carving of resistance balls of radius ``r`` in the embedded coarse metric.

    ``removed`` is subtracted from a private copy of ``forest`` before the
    connected components are read off.  Centres are tried in ascending
    vertex order; a centre whose whole component is within ``r/2`` only
    deactivates that component.
    """
    n = coarse.n
    work = forest.copy()
    idx = np.array(sorted(e.linear_index for e in removed), dtype=np.int64)
    work.update(idx, -np.ones(len(idx), dtype=np.int64))
    labels = components_from_forest(n, spanning_forest(work))
    active = np.ones(n, dtype=bool)
    remaining = np.ones(n, dtype=bool)
    emb = None
    parts, centers = [], []
    for u in range(n):
        if not active[u]:
            continue
        comp = np.flatnonzero(labels == labels[u])
        if len(comp) == 1:
            spread = 0.0
        else:
            emb = emb or build_embedding(coarse, q, seed, label)
            spread = 1.25 * float(emb.distances_from(u, comp).max())
        if spread <= r / 2:
            active[comp] = False
            continue
        emb = emb or build_embedding(coarse, q, seed, label)
        near = remaining & (emb.distances_from(u) <= r)
        near[u] = True
        members = np.flatnonzero(near)
        parts.append(tuple(int(x) for x in members))
        centers.append(u)
        active[members] = False
        remaining[members] = False
    return Partitioning(parts, centers, tuple(int(x) for x in np.flatnonzero(remaining)))


def peel_low_degree(node: NodeSketch, d: float, subtract) -> set[int]:
    """Recover and remove every edge outside the ``d``-core.

    All vertices below the threshold in a round are decoded from the same
    state; degrees only fall, so this reaches the same core as peeling one
    vertex at a time.
    """
    found: set[int] = set()
    while True:
        deg = node.degree
        low = np.flatnonzero((deg > 0) & (deg < d))
        if len(low) == 0:
            return found
        batch: set[int] = set()
        for v in low:
            batch.update(node.recovery.recover(int(v), int(deg[v])))
        batch -= found
        if not batch:
            raise DecodeFailure("peeling made no progress")
        subtract(np.array(sorted(batch), dtype=np.int64))
        found |= batch


def heavy_hitter_queries(hh: HeavyHitterSketch, coarse: WeightedGraph, parts: Partitioning,
                         eta: float) -> set[int]:
    """Decode ``S B Y K_P^+ (chi_P - chi_v)`` for every part ``P`` and vertex ``v`` outside it."""
    n = coarse.n
    found: set[int] = set()
    if hh.is_empty() or not parts.parts:
        return found
    singles = [p[0] for p in parts.parts if len(p) == 1]
    if singles:
        # no contraction needed: one inverse serves every singleton centre
        kinv = solve_laplacian_many(coarse, np.eye(n))
        others = np.arange(n)
        pairs = np.array([(u, v) for u in singles for v in others if v != u], dtype=np.int64)
        found |= {e.linear_index for e in hh.decode_pairs(kinv, pairs, eta)}
    for part in parts.parts:
        if len(part) == 1:
            continue
        con = contract(coarse, part)
        if con.n < 2:
            continue
        phis = potentials_many(con.system, 0, np.arange(1, con.n))
        found |= hh.decode_potentials(phis[con.mapping], eta)
    return found


class Decoder:
    """Runs the recursion over a built sketch stack; results are cached per node."""

    def __init__(self, params: GlobalParams, nodes: list[TreeNode], stack: SketchStack):
        self.params = params
        self.nodes = nodes
        self.stack = stack
        self.cache: dict[int, WeightedGraph] = {}
        self.heavy_cache: dict[int, set[int]] = {}
        self.level_cache: dict[int, set[int]] = {}
        self.stats = {"partitions": 0, "non_singleton": 0, "peeled": 0, "hh_queries": 0}

    # coarse approximations --------------------------------------------------

    def coarse_for(self, node: TreeNode) -> WeightedGraph:
        p = self.params
        if node.ell == 0:
            return WeightedGraph(p.n, {}, p.lam_u)
        child = child_of(self.nodes, node, SPARSIFY, node.i, node.ell - 1)
        return self.sparsify(child).scaled(1.0 / (p.gamma * (1 + p.eps)))

    def reweight(self, coarse: WeightedGraph, i: int, found: list[tuple[int, set[int]]],
                 label: str) -> dict[EdgeKey, float]:
        p = self.params
        weights: dict[EdgeKey, float] = {}
        if not any(found_j for _, found_j in found):
            return weights
        emb = build_embedding(coarse, p.embedding_rows, self.stack.seed, label)
        for j, edges in found:
            if not edges:
                continue
            idx = np.array(sorted(edges), dtype=np.int64)
            u, v = edge_endpoints(idx)
            r_est = 2.0 * emb.edge_distances(u, v)
            prob = np.minimum(1.0, p.c_prime * r_est * p.log_n / p.eps ** 2)
            hi = p.gamma ** (i - j)
            if j == p.levels:
                keep = prob <= hi
            else:
                keep = (prob > hi / p.gamma) & (prob <= hi)
            for e in idx[keep]:
                weights[EdgeKey.from_index(int(e))] = p.gamma ** (j - i)
        return weights

    # recursion ---------------------------------------------------------------

    def sparsify(self, node: TreeNode) -> WeightedGraph:
        if node.id in self.cache:
            return self.cache[node.id]
        p = self.params
        coarse = self.coarse_for(node)
        gamma = 0.0 if node.ell - node.i == p.levels + 1 else p.gamma_at(node.ell)
        found = []
        for j in range(node.i, p.levels + 1):
            child = child_of(self.nodes, node, HEAVY, j, node.ell + j - node.i)
            if child is not None:
                found.append((j, self.heavy_edges(child)))
        out = WeightedGraph(p.n, self.reweight(coarse, node.i, found, f"sp{node.id}"), gamma)
        self.cache[node.id] = out
        return out

    def heavy_edges(self, node: TreeNode) -> set[int]:
        if node.id in self.heavy_cache:
            return self.heavy_cache[node.id]
        try:
            if self.params.variant == "brute":
                out = self._heavy_brute(node)
            else:
                out = self._heavy_ballcarve(node)
        except DecodeFailure as exc:
            raise DecodeFailure(f"{node}: {exc}") from exc
        self.heavy_cache[node.id] = out
        return out

    def _heavy_brute(self, node: TreeNode) -> set[int]:
        sk = self.stack.nodes[node.id]
        if sk.heavy.is_empty():
            return set()
        coarse = self.coarse_for(node)
        found = heavy_edges_brute_force(sk.heavy, coarse, self.params.heavy_beta,
                                        self.params.quality(node.ell))
        self.stats["hh_queries"] += self.params.n * (self.params.n - 1) // 2
        return {e.linear_index for e in found}

    def _heavy_ballcarve(self, node: TreeNode) -> set[int]:
        p = self.params
        a = node.id
        sk = self.stack.nodes[a]
        out = peel_low_degree(sk, p.degree_threshold, lambda idx: self.stack.subtract_edges(a, idx))
        self.stats["peeled"] += len(out)
        if not sk.degree.any():
            return out
        coarse = self.coarse_for(node)
        low = {e.linear_index for e in find_low_connectivity_edges(sk.flce)}
        out |= low
        parts = ball_carving(sk.forest, [EdgeKey.from_index(e) for e in low], p.heavy_beta / 6, coarse,
                             p.ball_rows, self.stack.seed, f"ball{a}")
        self.stats["partitions"] += len(parts)
        self.stats["non_singleton"] += parts.non_singleton
        if parts.parts:
            self.stats["hh_queries"] += sum(p.n - len(part) for part in parts.parts)
            out |= heavy_hitter_queries(sk.heavy, coarse, parts, p.heavy_eta(node.ell))
        return out

    # chain variant ---------------------------------------------------------------

    def heavy_level(self, j: int) -> set[int]:
        """Peeling plus low-connectivity recovery on a private copy of sampling level ``j``."""
        if j in self.level_cache:
            return self.level_cache[j]
        p = self.params
        work = self.stack.nodes[j + 1].copy()
        try:
            out = peel_low_degree(work, p.degree_threshold,
                                  lambda idx: work.update(idx, -np.ones(len(idx), dtype=np.int64)))
            if work.degree.any():
                out |= {e.linear_index for e in find_low_connectivity_edges(work.flce)}
        except DecodeFailure as exc:
            raise DecodeFailure(f"sampling level {j}: {exc}") from exc
        self.level_cache[j] = out
        return out

    def sparsify_chain(self) -> WeightedGraph:
        p = self.params
        prev = None
        for ell in range(p.levels + 2):
            coarse = (WeightedGraph(p.n, {}, p.lam_u) if ell == 0
                      else prev.scaled(1.0 / (p.gamma * (1 + p.eps))))
            gamma = 0.0 if ell == p.levels + 1 else p.gamma_at(ell)
            found = [(j, self.heavy_level(j)) for j in range(p.levels + 1)]
            prev = WeightedGraph(p.n, self.reweight(coarse, 0, found, f"chain{ell}"), gamma)
            self.cache[ell] = prev
        return prev

    def run(self) -> WeightedGraph:
        if self.params.variant == "n32":
            return self.sparsify_chain()
        return self.sparsify(self.nodes[0])


def sparsify(params: GlobalParams, nodes: list[TreeNode], stack: SketchStack) -> WeightedGraph:
    return Decoder(params, nodes, stack).run()


def sparsify_n32(params: GlobalParams, nodes: list[TreeNode], stack: SketchStack) -> WeightedGraph:
    if params.variant != "n32":
        raise ValueError("stack was not built for the chain variant")
    return Decoder(params, nodes, stack).sparsify_chain()


def decode(params: GlobalParams, nodes: list[TreeNode], stack: SketchStack) -> WeightedGraph:
    """Top-level decode for any variant; the stack is consumed (peeling mutates it)."""
    return Decoder(params, nodes, stack).run()
