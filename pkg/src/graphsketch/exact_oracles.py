"""Dense reference computations used to check the sketch-based pipeline.

Everything here is cubic in ``n`` on purpose.  These routines are the
ground truth that tests and ``--verify`` compare against.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import networkx as nx
import numpy as np
import scipy.linalg as sla
from scipy.sparse.csgraph import connected_components

from .graph_core import EdgeKey, Graph, WeightedGraph, laplacian

PINV_CUTOFF = 1e-9
SPECTRAL_TOL = 1e-8


class DimensionMismatch(ValueError):
    pass


class EdgeAbsent(KeyError):
    pass


class DegreeTooLow(ValueError):
    pass


class Infinite:
    """Resistance between vertices in different components of an unregularised graph."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INFINITE"


INFINITE = Infinite()


@dataclass(frozen=True)
class PseudoInverse:
    matrix: np.ndarray
    fingerprint: str


def fingerprint(mat: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(mat, dtype=np.float64).tobytes()).hexdigest()[:16]


def pseudo_inverse(k: np.ndarray) -> PseudoInverse:
    """Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition."""
    k = np.asarray(k, dtype=np.float64)
    if k.size == 0:
        return PseudoInverse(k.copy(), fingerprint(k))
    vals, vecs = np.linalg.eigh((k + k.T) / 2)
    top = max(float(np.max(np.abs(vals))), 0.0)
    keep = vals > PINV_CUTOFF * top if top > 0 else np.zeros_like(vals, dtype=bool)
    inv = (vecs[:, keep] / vals[keep]) @ vecs[:, keep].T
    return PseudoInverse((inv + inv.T) / 2, fingerprint(k))


def _as_weighted(g) -> WeightedGraph:
    return g.to_weighted() if isinstance(g, Graph) else g


def component_labels(g) -> np.ndarray:
    g = _as_weighted(g)
    lap = g.sparse_laplacian()
    _, labels = connected_components(lap != 0, directed=False)
    return labels


def exact_effective_resistance(g, u: int, v: int):
    """``b_uv^T K^+ b_uv``, or :data:`INFINITE` across components when ``gamma == 0``."""
    g = _as_weighted(g)
    if u == v:
        return 0.0
    if g.gamma == 0:
        labels = component_labels(g)
        if labels[u] != labels[v]:
            return INFINITE
    pinv = pseudo_inverse(laplacian(g)).matrix
    return float(pinv[u, u] + pinv[v, v] - 2 * pinv[u, v])


def all_pairs_resistance(g) -> np.ndarray:
    """Matrix of pairwise resistances; ``inf`` marks disconnected pairs."""
    g = _as_weighted(g)
    pinv = pseudo_inverse(laplacian(g)).matrix
    d = np.diag(pinv)
    res = d[:, None] + d[None, :] - 2 * pinv
    np.fill_diagonal(res, 0.0)
    res = np.maximum(res, 0.0)
    if g.gamma == 0:
        labels = component_labels(g)
        res[labels[:, None] != labels[None, :]] = np.inf
    return res


def edge_resistances(g) -> dict[EdgeKey, float]:
    g = _as_weighted(g)
    res = all_pairs_resistance(g)
    return {e: float(res[e.u, e.v]) for e in g.edges}


def generalized_spectrum(l_g: np.ndarray, l_h: np.ndarray) -> tuple[np.ndarray, float]:
    """Eigenvalues of ``L_H`` relative to ``L_G`` on ``range(L_G)``.

    Also returns the largest Rayleigh quotient of ``L_H`` on ``null(L_G)``
    (zero when ``L_H`` annihilates the null space, as it must for an
    approximation in the row-span ordering).
    """
    vals, vecs = np.linalg.eigh((l_g + l_g.T) / 2)
    top = float(np.max(np.abs(vals))) if vals.size else 0.0
    if top == 0:
        null_mass = float(np.max(np.abs(l_h))) if l_h.size else 0.0
        return np.array([]), null_mass
    keep = vals > PINV_CUTOFF * top
    basis = vecs[:, keep]
    inv_sqrt = basis / np.sqrt(vals[keep])
    rel = inv_sqrt.T @ l_h @ inv_sqrt
    spec = np.linalg.eigvalsh((rel + rel.T) / 2)
    null = vecs[:, ~keep]
    null_mass = 0.0
    if null.shape[1]:
        null_mass = float(np.max(np.abs(np.linalg.eigvalsh(null.T @ l_h @ null))))
        null_mass /= top
    return spec, null_mass


def is_spectral_sparsifier(g, h, eps: float, tol: float = SPECTRAL_TOL) -> bool:
    g, h = _as_weighted(g), _as_weighted(h)
    if g.n != h.n:
        raise DimensionMismatch(f"{g.n} vs {h.n} vertices")
    spec, null_mass = generalized_spectrum(laplacian(g), laplacian(h))
    if null_mass > tol:
        return False
    if spec.size == 0:
        return True
    return bool(spec.min() >= 1 - eps - tol and spec.max() <= 1 + eps + tol)


def loewner_le(a: np.ndarray, b: np.ndarray, tol: float = SPECTRAL_TOL) -> bool:
    """``a <= b`` in the Loewner order, up to ``tol`` relative to ``|b|``."""
    diff = b - a
    scale = max(1.0, float(np.max(np.abs(b))) if b.size else 1.0)
    return bool(np.linalg.eigvalsh((diff + diff.T) / 2).min() >= -tol * scale)


def to_networkx(g) -> nx.Graph:
    out = nx.Graph()
    out.add_nodes_from(range(g.n))
    if isinstance(g, Graph):
        out.add_edges_from((e.u, e.v) for e in g.edges)
    else:
        out.add_weighted_edges_from((e.u, e.v, w) for e, w in g.edges.items())
    return out


def exact_edge_connectivity(g: Graph, e) -> int:
    """Size of a minimum ``u``-``v`` cut, by max-flow."""
    key = e if isinstance(e, EdgeKey) else EdgeKey(*e)
    if key not in g:
        raise EdgeAbsent(key)
    return int(nx.algorithms.connectivity.local_edge_connectivity(to_networkx(g), key.u, key.v))


def heavy_edges_brute_force(sketch_view, coarse: WeightedGraph, beta: float,
                            quality: float = 1.0) -> set[EdgeKey]:
    """Decode the heavy-hitter sketch against every pair's electrical potentials.

    ``sketch_view`` is a heavy-hitter sketch (anything exposing
    ``decode_pairs(pinv, pairs, eta)``).  Potentials come from a dense
    pseudo-inverse of the coarse sparsifier.
    """
    n = coarse.n
    if n < 2 or sketch_view.is_empty():
        return set()
    pinv = pseudo_inverse(laplacian(coarse)).matrix
    eta = 0.5 * np.sqrt(beta / (3 * quality))
    pairs = np.array(list(itertools.combinations(range(n), 2)), dtype=np.int64)
    return sketch_view.decode_pairs(pinv, pairs, eta)


def _induced(adj: np.ndarray, verts: np.ndarray) -> np.ndarray:
    return adj[np.ix_(verts, verts)]


def induced_resistance_diameter(adj: np.ndarray, verts) -> float:
    verts = np.asarray(verts, dtype=np.int64)
    if len(verts) <= 1:
        return 0.0
    sub = _induced(adj, verts).astype(np.float64)
    lap = np.diag(sub.sum(axis=1)) - sub
    n_comp, _ = connected_components(sub, directed=False)
    if n_comp > 1:
        return float("inf")
    pinv = pseudo_inverse(lap).matrix
    d = np.diag(pinv)
    return float(np.max(d[:, None] + d[None, :] - 2 * pinv))


def _sweep_cut(adj: np.ndarray, verts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    sub = _induced(adj, verts).astype(np.float64)
    deg = sub.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm_lap = np.eye(len(verts)) - inv_sqrt[:, None] * sub * inv_sqrt[None, :]
    _, vecs = sla.eigh(norm_lap, subset_by_index=[1, 1])
    order = np.argsort(vecs[:, 0] * inv_sqrt, kind="stable")
    total = deg.sum()
    inside = np.zeros(len(verts), dtype=bool)
    vol = 0.0
    cut = 0.0
    best, best_k = np.inf, 1
    for k, idx in enumerate(order[:-1], start=1):
        # edges from idx to the current side leave the cut, the rest join it
        to_inside = sub[idx, inside].sum()
        cut += deg[idx] - 2 * to_inside
        vol += deg[idx]
        inside[idx] = True
        phi = cut / min(vol, total - vol)
        if phi < best:
            best, best_k = phi, k
    return verts[order[:best_k]], verts[order[best_k:]]


def decompose(h: Graph, d_min: float, r_diam: float) -> list[list[int]]:
    """Partition ``V(h)`` into low induced-diameter clusters plus singletons.

    Low-degree vertices are peeled into singletons, disconnected pieces are
    handled separately, and a piece whose induced resistance diameter is too
    large is split along its best-conductance spectral sweep cut.
    """
    if h.n and int(h.degree.min()) < 10 * d_min:
        raise DegreeTooLow(f"min degree {int(h.degree.min())} < 10*d_min = {10 * d_min}")
    adj = np.zeros((h.n, h.n), dtype=np.int8)
    for e in h.edges:
        adj[e.u, e.v] = adj[e.v, e.u] = 1
    clusters: list[list[int]] = []
    stack = [np.arange(h.n)]
    while stack:
        verts = stack.pop()
        while len(verts):
            deg = _induced(adj, verts).sum(axis=1)
            low = deg < d_min
            if not low.any():
                break
            clusters.extend([int(v)] for v in verts[low])
            verts = verts[~low]
        if len(verts) == 0:
            continue
        n_comp, labels = connected_components(_induced(adj, verts), directed=False)
        if n_comp > 1:
            stack.extend(verts[labels == c] for c in range(n_comp))
            continue
        if len(verts) == 1 or induced_resistance_diameter(adj, verts) <= r_diam:
            clusters.append(sorted(int(v) for v in verts))
            continue
        left, right = _sweep_cut(adj, verts)
        stack.extend([left, right])
    return sorted(clusters)
