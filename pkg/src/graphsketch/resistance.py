"""Laplacian solves, resistance embeddings and vertex-set contraction.

All routines work on explicit (already sparsified) graphs.  The regulariser
is always the diagonal ``gamma * I`` form; after contraction it becomes a
vector, with the supernode carrying ``gamma * |P|``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .graph_core import WeightedGraph, laplacian_from_arrays, num_pairs
from .prg import HashFamily, poly_eval

TAU_SOLVE = 1e-8


class NotConverged(RuntimeError):
    pass


@dataclass
class LaplacianSystem:
    """Sparse ``B^T W B + diag(reg)`` together with what the solver needs."""

    matrix: sp.csr_matrix
    reg: np.ndarray
    labels: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def regularized(self) -> bool:
        return bool(np.all(self.reg > 0))

    def project(self, x: np.ndarray) -> np.ndarray:
        """Remove per-component means (only used without regulariser)."""
        if self.regularized:
            return x
        if self.labels is None:
            adj = self.matrix.copy()
            adj.setdiag(0)
            _, self.labels = connected_components(adj != 0, directed=False)
        counts = np.bincount(self.labels)
        out = x.copy()
        for c in range(len(counts)):
            sel = self.labels == c
            out[sel] -= out[sel].mean(axis=0)
        return out


def system_of(obj) -> LaplacianSystem:
    if isinstance(obj, LaplacianSystem):
        return obj
    if isinstance(obj, Contraction):
        return obj.system
    if isinstance(obj, CoarseSparsifier):
        obj = obj.graph
    u, v, w = obj.arrays()
    reg = np.full(obj.n, float(obj.gamma))
    return LaplacianSystem(laplacian_from_arrays(obj.n, u, v, w, reg), reg)


def solve_laplacian_many(k, rhs: np.ndarray, tol: float = TAU_SOLVE,
                         max_iter: int | None = None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradient on every column of ``rhs``."""
    system = system_of(k)
    a = system.matrix
    n = system.n
    b = np.asarray(rhs, dtype=np.float64)
    vector = b.ndim == 1
    if vector:
        b = b[:, None]
    if n == 0 or b.shape[1] == 0:
        return b.copy()[:, 0] if vector else b.copy()
    b = system.project(b)
    max_iter = max_iter if max_iter is not None else 10 * n
    diag = a.diagonal()
    dinv = np.where(diag > 0, 1.0 / np.where(diag > 0, diag, 1.0), 1.0)[:, None]
    bnorm = np.linalg.norm(b, axis=0)
    # iterate past the contract so the true residual clears it
    target = 0.1 * tol * bnorm
    x = np.zeros_like(b)
    r = b.copy()
    z = dinv * r
    p = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    for _ in range(max_iter):
        res = np.linalg.norm(r, axis=0)
        live = res > target
        if not live.any():
            break
        ap = a @ p
        pap = np.einsum("ij,ij->j", p, ap)
        alpha = np.where(live & (pap > 0), rz / np.where(pap > 0, pap, 1.0), 0.0)
        x += alpha * p
        r -= alpha * ap
        z = dinv * r
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(rz > 0, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
    x = system.project(x)
    final = np.linalg.norm(a @ x - b, axis=0)
    if np.any(final > tol * bnorm):
        worst = float(np.max(final / np.where(bnorm > 0, bnorm, 1.0)))
        raise NotConverged(f"relative residual {worst:.2e} after {max_iter} iterations")
    return x[:, 0] if vector else x


def solve_laplacian(k, b: np.ndarray, tol: float = TAU_SOLVE,
                    max_iter: int | None = None) -> np.ndarray:
    return solve_laplacian_many(k, np.asarray(b, dtype=np.float64), tol, max_iter)


@dataclass
class CoarseSparsifier:
    """Explicit ``K~`` with ``(1/C) K <= K~ <= K`` for the graph it stands for."""

    graph: WeightedGraph
    quality: float = 1.0

    def __post_init__(self):
        if self.quality < 1:
            raise ValueError("quality factor must be at least 1")

    @property
    def n(self) -> int:
        return self.graph.n

    @classmethod
    def identity(cls, n: int, scale: float, quality: float) -> "CoarseSparsifier":
        return cls(WeightedGraph(n, {}, scale), quality)


@dataclass
class ResistanceEmbedding:
    """Rows ``X[v]`` with ``|X[u] - X[v]|^2`` approximating ``R~_uv``."""

    coords: np.ndarray
    source: str

    @property
    def q(self) -> int:
        return self.coords.shape[1]

    def distance(self, u: int, v: int) -> float:
        if u == v:
            return 0.0
        d = self.coords[u] - self.coords[v]
        return float(d @ d)

    def distances_from(self, u: int, vs=None) -> np.ndarray:
        vs = np.arange(len(self.coords)) if vs is None else np.asarray(vs, dtype=np.int64)
        d = self.coords[vs] - self.coords[u]
        return np.einsum("ij,ij->i", d, d)

    def edge_distances(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        d = self.coords[np.asarray(u)] - self.coords[np.asarray(v)]
        return np.einsum("ij,ij->i", d, d)


def graph_fingerprint(g: WeightedGraph) -> str:
    u, v, w = g.arrays()
    h = hashlib.sha256(np.int64(g.n).tobytes() + np.float64(g.gamma).tobytes())
    for arr in (u, v, w):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:16]


def default_q(n: int) -> int:
    return 400 * max(1, math.ceil(math.log2(max(n, 2))))


SIGN_BITS = 30


def jl_signs(seed: bytes, label: str, q: int, keys: np.ndarray, k: int) -> np.ndarray:
    """``q x len(keys)`` matrix of +-1.

    Each ``k``-wise hash evaluation is a near-uniform 31-bit value, so its
    low 30 bits serve 30 consecutive rows.
    """
    groups = -(-q // SIGN_BITS)
    coefs = np.array([HashFamily.from_seed(seed, f"{label}/jl/{g}", k).coefs for g in range(groups)],
                     dtype=np.int64).T[:, :, None]
    vals = poly_eval(coefs, np.asarray(keys, dtype=np.int64)[None, :])
    bits = (vals[:, None, :] >> np.arange(SIGN_BITS)[None, :, None]) & 1
    return 1.0 - 2.0 * bits.reshape(groups * SIGN_BITS, -1)[:q]


def build_embedding(coarse, q: int | None = None, seed: bytes = b"", label: str = "") -> ResistanceEmbedding:
    """``M = Q B~ K~^+ / sqrt(q)`` via ``q`` Laplacian solves.

    ``Q`` is never formed over all pairs: signs are generated only for the
    edges of ``K~`` and its ``n`` regulariser rows.
    """
    g = coarse.graph if isinstance(coarse, CoarseSparsifier) else coarse
    n = g.n
    if len(g) == 0 and g.gamma == 0:
        raise ValueError("embedding needs edges or a regulariser")
    q = q or default_q(n)
    k = max(2, math.ceil(math.log2(max(n, 2))))
    u, v, w = g.arrays()
    m = len(u)
    keys = np.concatenate([v * (v - 1) // 2 + u, num_pairs(n) + np.arange(n)]).astype(np.int64)
    signs = jl_signs(seed, label, q, keys, k)
    sw = np.sqrt(w)
    qbt = np.zeros((n, q))
    if m:
        rows = np.concatenate([u, v])
        cols = np.concatenate([np.arange(m), np.arange(m)])
        inc_t = sp.csr_matrix((np.concatenate([sw, -sw]), (rows, cols)), shape=(n, m))
        qbt += inc_t @ signs[:, :m].T
    if g.gamma > 0:
        qbt += math.sqrt(g.gamma) * signs[:, m:].T
    coords = solve_laplacian_many(g, qbt) / math.sqrt(q)
    return ResistanceEmbedding(coords, graph_fingerprint(g))


@dataclass
class Contraction:
    """``Y_P^T K~ Y_P``: vertex set ``P`` merged into supernode 0."""

    source: WeightedGraph
    members: tuple
    mapping: np.ndarray
    system: LaplacianSystem = field(repr=False)

    @property
    def supernode(self) -> int:
        return 0

    @property
    def n(self) -> int:
        return self.system.n

    def lift(self, phi: np.ndarray) -> np.ndarray:
        """Potentials on the original vertex set (``Y_P phi``)."""
        return np.asarray(phi)[self.mapping]

    def edges(self) -> dict:
        coo = sp.triu(self.system.matrix, k=1).tocoo()
        return {(int(a), int(b)): float(-x) for a, b, x in zip(coo.row, coo.col, coo.data) if x != 0}


def contract(coarse, members) -> Contraction:
    g = coarse.graph if isinstance(coarse, CoarseSparsifier) else coarse
    members = tuple(sorted(set(int(x) for x in members)))
    if not members:
        raise ValueError("cannot contract an empty set")
    n = g.n
    inside = np.zeros(n, dtype=bool)
    inside[list(members)] = True
    mapping = np.zeros(n, dtype=np.int64)
    mapping[~inside] = np.arange(1, n - len(members) + 1)
    u, v, w = g.arrays()
    a, b = mapping[u], mapping[v]
    keep = a != b
    n_new = n - len(members) + 1
    reg = np.full(n_new, float(g.gamma))
    reg[0] = g.gamma * len(members)
    lap = laplacian_from_arrays(n_new, a[keep], b[keep], w[keep], reg)
    lap.sum_duplicates()
    return Contraction(g, members, mapping, LaplacianSystem(lap, reg))


def potentials(k, source: int, sink: int) -> np.ndarray:
    """``K^+ (chi_source - chi_sink)``."""
    if source == sink:
        raise ValueError("source and sink must differ")
    system = system_of(k)
    b = np.zeros(system.n)
    b[source] += 1.0
    b[sink] -= 1.0
    return solve_laplacian(system, b)


def potentials_many(k, source: int, sinks) -> np.ndarray:
    """Columns ``K^+ (chi_source - chi_t)`` for each sink ``t``."""
    system = system_of(k)
    sinks = np.asarray(sinks, dtype=np.int64)
    b = np.zeros((system.n, len(sinks)))
    b[source, :] += 1.0
    b[sinks, np.arange(len(sinks))] -= 1.0
    return solve_laplacian_many(system, b)
