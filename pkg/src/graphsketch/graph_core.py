"""Graphs over a fixed vertex set: edge indexing, incidence algebra, demands.

Edges are unordered pairs ``u < v`` identified by the colexicographic index
``v*(v-1)/2 + u``.  The incidence row of an edge has ``+1`` at the smaller
endpoint and ``-1`` at the larger one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np
import scipy.sparse as sp

TAU_ZERO = 1e-9


class StreamViolation(ValueError):
    """An update would push an edge multiplicity outside {0, 1}."""


class NonZeroSum(ValueError):
    """A demand vector does not sum to zero."""


VertexId = int


def num_pairs(n: int) -> int:
    return n * (n - 1) // 2


def edge_index(u: int, v: int) -> int:
    if u == v:
        raise ValueError("self-loops are not edges")
    if u > v:
        u, v = v, u
    return v * (v - 1) // 2 + u


def edge_from_index(idx: int) -> tuple[int, int]:
    v = (1 + math.isqrt(1 + 8 * idx)) // 2
    while v * (v - 1) // 2 > idx:
        v -= 1
    while (v + 1) * v // 2 <= idx:
        v += 1
    return idx - v * (v - 1) // 2, v


def edge_endpoints(idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised inverse of :func:`edge_index`."""
    idx = np.asarray(idx, dtype=np.int64)
    v = ((1 + np.sqrt(1 + 8 * idx.astype(np.float64))) // 2).astype(np.int64)
    # float rounding can be off by one near perfect squares
    v = np.where(v * (v - 1) // 2 > idx, v - 1, v)
    v = np.where((v + 1) * v // 2 <= idx, v + 1, v)
    return idx - v * (v - 1) // 2, v


@dataclass(frozen=True, order=True)
class EdgeKey:
    u: int
    v: int

    def __post_init__(self):
        if self.u == self.v:
            raise ValueError("self-loops are not edges")
        if self.u > self.v:
            lo, hi = self.v, self.u
            object.__setattr__(self, "u", lo)
            object.__setattr__(self, "v", hi)
        if self.u < 0:
            raise ValueError("vertex ids are non-negative")

    @property
    def linear_index(self) -> int:
        return edge_index(self.u, self.v)

    @classmethod
    def from_index(cls, idx: int) -> "EdgeKey":
        return cls(*edge_from_index(int(idx)))

    def __iter__(self) -> Iterator[int]:
        yield self.u
        yield self.v


def incidence_row(e: EdgeKey, n: int) -> np.ndarray:
    row = np.zeros(n)
    row[e.u] = 1.0
    row[e.v] = -1.0
    return row


class Graph:
    """Simple unweighted graph on ``range(n)`` with exact degree counters."""

    def __init__(self, n: int, edges: Iterable = ()):
        if n < 0:
            raise ValueError("n must be non-negative")
        self.n = n
        self._edges: set[EdgeKey] = set()
        self.degree = np.zeros(n, dtype=np.int64)
        for e in edges:
            self.insert(_as_key(e))

    def _check(self, e: EdgeKey) -> None:
        if e.v >= self.n:
            raise ValueError(f"vertex {e.v} out of range for n={self.n}")

    def insert(self, e: EdgeKey) -> None:
        self._check(e)
        if e in self._edges:
            raise StreamViolation(f"edge {e.u} {e.v} already present")
        self._edges.add(e)
        self.degree[e.u] += 1
        self.degree[e.v] += 1

    def delete(self, e: EdgeKey) -> None:
        self._check(e)
        if e not in self._edges:
            raise StreamViolation(f"edge {e.u} {e.v} not present")
        self._edges.remove(e)
        self.degree[e.u] -= 1
        self.degree[e.v] -= 1

    def __contains__(self, e) -> bool:
        return _as_key(e) in self._edges

    def __len__(self) -> int:
        return len(self._edges)

    @property
    def edges(self) -> list[EdgeKey]:
        return sorted(self._edges, key=lambda e: e.linear_index)

    def edge_indices(self) -> np.ndarray:
        return np.array(sorted(e.linear_index for e in self._edges), dtype=np.int64)

    def neighbors(self, v: int) -> list[int]:
        return sorted({e.u if e.v == v else e.v for e in self._edges if v in (e.u, e.v)})

    def to_weighted(self, gamma: float = 0.0) -> "WeightedGraph":
        return WeightedGraph(self.n, {e: 1.0 for e in self._edges}, gamma)

    def copy(self) -> "Graph":
        return Graph(self.n, self._edges)


@dataclass
class WeightedGraph:
    """Positive edge weights plus an optional ``gamma * I`` regulariser."""

    n: int
    edges: dict = field(default_factory=dict)
    gamma: float = 0.0

    def __post_init__(self):
        clean: dict[EdgeKey, float] = {}
        for e, w in dict(self.edges).items():
            key = _as_key(e)
            if key.v >= self.n:
                raise ValueError(f"vertex {key.v} out of range for n={self.n}")
            if not w > 0:
                raise ValueError(f"weight of {key} must be positive, got {w}")
            clean[key] = clean.get(key, 0.0) + float(w)
        self.edges = clean
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")

    @classmethod
    def from_graph(cls, g: Graph, gamma: float = 0.0) -> "WeightedGraph":
        return g.to_weighted(gamma)

    def scaled(self, factor: float) -> "WeightedGraph":
        """Return ``factor * K`` (weights and regulariser both scale)."""
        return WeightedGraph(self.n, {e: w * factor for e, w in self.edges.items()}, self.gamma * factor)

    def with_gamma(self, gamma: float) -> "WeightedGraph":
        return WeightedGraph(self.n, dict(self.edges), gamma)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Endpoints and weights ordered by edge index."""
        keys = sorted(self.edges, key=lambda e: e.linear_index)
        u = np.array([e.u for e in keys], dtype=np.int64)
        v = np.array([e.v for e in keys], dtype=np.int64)
        w = np.array([self.edges[e] for e in keys], dtype=np.float64)
        return u, v, w

    def sparse_laplacian(self) -> sp.csr_matrix:
        u, v, w = self.arrays()
        return laplacian_from_arrays(self.n, u, v, w, self.gamma)

    def weighted_degree(self) -> np.ndarray:
        deg = np.zeros(self.n)
        for e, w in self.edges.items():
            deg[e.u] += w
            deg[e.v] += w
        return deg

    def __len__(self) -> int:
        return len(self.edges)


def _as_key(e) -> EdgeKey:
    if isinstance(e, EdgeKey):
        return e
    u, v = e
    return EdgeKey(int(u), int(v))


def laplacian_from_arrays(n: int, u: np.ndarray, v: np.ndarray, w: np.ndarray,
                          reg=0.0) -> sp.csr_matrix:
    """Sparse ``B^T W B + diag(reg)``; ``reg`` may be a scalar or a vector."""
    rows = np.concatenate([u, v, u, v])
    cols = np.concatenate([u, v, v, u])
    vals = np.concatenate([w, w, -w, -w])
    lap = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()
    reg = np.broadcast_to(np.asarray(reg, dtype=np.float64), (n,))
    if np.any(reg):
        lap = lap + sp.diags(reg)
    return lap.tocsr()


def laplacian(g) -> np.ndarray:
    """Dense Laplacian ``B^T W B + gamma I`` of a graph."""
    if isinstance(g, Graph):
        g = g.to_weighted()
    return g.sparse_laplacian().toarray()


def incidence_matrix(g) -> sp.csr_matrix:
    """Rows ``b_e`` for the edges of ``g`` in edge-index order."""
    if isinstance(g, Graph):
        g = g.to_weighted()
    u, v, _ = g.arrays()
    m = len(u)
    rows = np.concatenate([np.arange(m), np.arange(m)])
    cols = np.concatenate([u, v])
    vals = np.concatenate([np.ones(m), -np.ones(m)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(m, g.n))


def decompose_demand(sigma, tol: float = TAU_ZERO) -> list[tuple[int, int, float]]:
    """Split a zero-sum demand into ``alpha * (chi_s - chi_t)`` terms.

    The smallest nonzero entry (by magnitude) is matched against an entry of
    opposite sign, which zeroes at least one coordinate per step.  The sum of
    the returned ``alpha`` equals half the l1 norm of ``sigma``.
    """
    sigma = np.array(sigma, dtype=np.float64)
    if abs(sigma.sum()) > tol:
        raise NonZeroSum(f"demand sums to {sigma.sum():.3e}")
    out = []
    sigma[np.abs(sigma) <= tol] = 0.0
    while True:
        nz = np.flatnonzero(sigma)
        if len(nz) < 2:
            break
        s = nz[np.argmin(np.abs(sigma[nz]))]
        opposite = nz[np.sign(sigma[nz]) == -np.sign(sigma[s])]
        if len(opposite) == 0:
            break
        t = opposite[np.argmax(np.abs(sigma[opposite]))]
        alpha = abs(sigma[s])
        if sigma[s] > 0:
            out.append((int(s), int(t), float(alpha)))
        else:
            out.append((int(t), int(s), float(alpha)))
        sigma[t] += sigma[s]
        sigma[s] = 0.0
        if abs(sigma[t]) <= tol:
            sigma[t] = 0.0
    return out


def read_edge_list(lines: Iterable[str], n: int | None = None) -> Graph:
    """Parse ``u v`` lines (``#`` comments allowed) into a :class:`Graph`."""
    pairs = []
    for raw in lines:
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        a, b = line.split()[:2]
        pairs.append((int(a), int(b)))
    if n is None:
        n = 1 + max((max(p) for p in pairs), default=-1)
    return Graph(n, pairs)


def write_edge_list(g: Graph) -> str:
    return "".join(f"{e.u} {e.v}\n" for e in g.edges)

