"""Linear sketches of the edge-indicator vector, organised per tree node.

Every structure stores, for each vertex ``x``, the integer column
``S B[:, x]`` of its sketch matrix applied to the signed incidence matrix.
Summing columns over a vertex set sketches the edges leaving that set, and
post-multiplying the columns by a potential vector ``phi`` sketches ``B phi``.
All cells are integers (fingerprints reduced modulo ``2^31 - 1``), so the
state after any sequence of updates depends only on the final edge set.

Sparse storage is used throughout: a :class:`CellTable` maps integer keys to
fixed-width rows and treats absent rows as zero.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .graph_core import EdgeKey, StreamViolation, edge_endpoints, num_pairs
from .prg import MERSENNE, Allocator, HashFamily, bernoulli_threshold, mod_mersenne, poly_eval

COUNT, IDXSUM, FP1, FP2 = range(4)
CELLS = 4
MAGIC = b"GSKT\x01"


class DecodeFailure(RuntimeError):
    pass


class CapacityExceeded(ValueError):
    pass


def modpow(base, exp) -> np.ndarray:
    """Elementwise ``base ** exp mod 2^31 - 1`` for non-negative ``exp``."""
    exp = np.asarray(exp, dtype=np.int64)
    base = np.broadcast_to(np.asarray(base, dtype=np.int64), exp.shape) % MERSENNE
    if exp.size <= 64:
        flat = [pow(int(b), int(e), MERSENNE) for b, e in zip(base.ravel(), exp.ravel())]
        return np.array(flat, dtype=np.int64).reshape(exp.shape)
    out = np.ones(exp.shape, dtype=np.int64)
    b = base.copy()
    e = exp.copy()
    while np.any(e):
        odd = (e & 1).astype(bool)
        out = np.where(odd, out * b % MERSENNE, out)
        b = b * b % MERSENNE
        e >>= 1
    return out


def trailing_zeros(vals: np.ndarray, cap: int) -> np.ndarray:
    vals = np.asarray(vals, dtype=np.int64)
    low = vals & -vals
    tz = np.where(vals == 0, cap, np.log2(np.maximum(low, 1)).astype(np.int64))
    return np.minimum(tz, cap)


class CellTable:
    """Sparse ``key -> int64 row`` map; missing rows read as zero."""

    def __init__(self, width: int, mod_cols: np.ndarray | None = None):
        self.width = width
        self.mod_cols = mod_cols
        self.keys = np.empty(0, dtype=np.int64)
        self.rows = np.zeros((0, width), dtype=np.int64)

    def _ensure(self, keys: np.ndarray) -> np.ndarray:
        new = np.setdiff1d(np.unique(keys), self.keys, assume_unique=True)
        if len(new):
            allk = np.concatenate([self.keys, new])
            order = np.argsort(allk, kind="stable")
            rows = np.concatenate([self.rows, np.zeros((len(new), self.width), dtype=np.int64)])
            self.keys, self.rows = allk[order], rows[order]
        return np.searchsorted(self.keys, keys)

    def add(self, keys: np.ndarray, cols: np.ndarray, vals: np.ndarray) -> None:
        keys = np.asarray(keys, dtype=np.int64)
        if keys.size == 0:
            return
        pos = self._ensure(keys)
        flat = self.rows.reshape(-1)
        np.add.at(flat, pos * self.width + np.asarray(cols, dtype=np.int64), np.asarray(vals, dtype=np.int64))
        if self.mod_cols is not None:
            touched = np.unique(pos)
            sub = self.rows[touched]
            sub[:, self.mod_cols] %= MERSENNE
            self.rows[touched] = sub

    def get(self, keys) -> np.ndarray:
        keys = np.atleast_1d(np.asarray(keys, dtype=np.int64))
        out = np.zeros((len(keys), self.width), dtype=np.int64)
        if len(self.keys):
            pos = np.minimum(np.searchsorted(self.keys, keys), len(self.keys) - 1)
            hit = self.keys[pos] == keys
            out[hit] = self.rows[pos[hit]]
        return out

    def compact(self) -> None:
        live = np.any(self.rows != 0, axis=1)
        if not live.all():
            self.keys, self.rows = self.keys[live], self.rows[live]

    def is_empty(self) -> bool:
        return not np.any(self.rows)

    def copy(self) -> "CellTable":
        out = CellTable(self.width, self.mod_cols)
        out.keys, out.rows = self.keys.copy(), self.rows.copy()
        return out

    def merge(self, other: "CellTable") -> None:
        if other.width != self.width:
            raise ValueError("cannot merge tables of different widths")
        if len(other.keys):
            reps = np.repeat(other.keys, self.width)
            cols = np.tile(np.arange(self.width), len(other.keys))
            self.add(reps, cols, other.rows.reshape(-1))

    def to_bytes(self) -> bytes:
        self.compact()
        head = struct.pack("<qi", len(self.keys), self.width)
        return head + self.keys.astype("<i8").tobytes() + self.rows.astype("<i8").tobytes()

    @classmethod
    def read(cls, buf: io.BytesIO, mod_cols=None) -> "CellTable":
        count, width = struct.unpack("<qi", buf.read(12))
        out = cls(width, mod_cols)
        out.keys = np.frombuffer(buf.read(8 * count), dtype="<i8").astype(np.int64)
        out.rows = np.frombuffer(buf.read(8 * count * width), dtype="<i8").astype(np.int64).reshape(count, width)
        return out


def _fp_mask(width: int) -> np.ndarray:
    cols = np.arange(width)
    return (cols % CELLS == FP1) | (cols % CELLS == FP2)


def one_sparse(cells: np.ndarray, z1: np.ndarray, z2: np.ndarray, n_pairs: int):
    """Test cells ``(..., 4)`` for a single surviving ``+-1`` coordinate.

    Returns ``(ok, idx, sign)``; ``z1``/``z2`` broadcast against ``cells[..., 0]``.
    """
    count = cells[..., COUNT]
    sign = np.sign(count)
    ok = np.abs(count) == 1
    idx = np.where(ok, cells[..., IDXSUM] * sign - 1, 0)
    ok &= (idx >= 0) & (idx < n_pairs)
    idx = np.where(ok, idx, 0)
    if np.any(ok):
        z1b = np.broadcast_to(z1, count.shape)
        z2b = np.broadcast_to(z2, count.shape)
        e1 = modpow(z1b[ok], idx[ok] + 1)
        e2 = modpow(z2b[ok], idx[ok] + 1)
        s = sign[ok]
        e1 = np.where(s > 0, e1, (MERSENNE - e1) % MERSENNE)
        e2 = np.where(s > 0, e2, (MERSENNE - e2) % MERSENNE)
        good = (cells[..., FP1][ok] == e1) & (cells[..., FP2][ok] == e2)
        sub = ok.copy()
        sub[ok] = good
        ok = sub
    return ok, idx, sign


def _fingerprint_base(vals) -> np.ndarray:
    # zero would make the fingerprint vanish
    return np.maximum(np.asarray(vals, dtype=np.int64) % MERSENNE, 2)


def _draw_ints(alloc: Allocator | None, seed: bytes, label: str, count: int) -> np.ndarray:
    if alloc is not None:
        return alloc.chain.ints(alloc.take(count * 31), count)
    return np.array(HashFamily.from_seed(seed, label, count).coefs, dtype=np.int64)


class ForestSketch:
    """Bundle of l0-sampler banks supporting spanning-forest recovery.

    With ``copies > 1`` each copy sketches its own subsample of the edges at
    rate ``rate``.  Copy ``c`` uses the pairwise hash ``a_c + b_c * edge``
    whose coefficients are two random low-degree polynomials evaluated at
    ``c``, so the copies are ``copy_independence``-wise independent of each
    other.  The copies share their bank hashes.
    """

    def __init__(self, n: int, banks: int, alloc: Allocator, copies: int = 1, rate: float = 1.0):
        self.n = n
        self.n_pairs = max(num_pairs(n), 1)
        self.banks = banks
        self.levels = max(1, math.ceil(math.log2(self.n_pairs))) + 1
        self.copies = copies
        self.rate = rate
        self.level_hash = [HashFamily.from_chain(alloc, 2) for _ in range(banks)]
        zs = alloc.chain.ints(alloc.take(2 * banks * 31), 2 * banks)
        self.z1 = _fingerprint_base(zs[:banks])
        self.z2 = _fingerprint_base(zs[banks:])
        self.copy_independence = max(4, 2 * math.ceil(math.log2(max(n, 2))))
        self.copy_coefs = None
        if copies > 1:
            if copies >= MERSENNE:
                raise ValueError("too many copies for the hash field")
            self.copy_coefs = tuple(HashFamily.from_chain(alloc, self.copy_independence) for _ in range(2))
        width = banks * self.levels * CELLS
        self.table = CellTable(width, _fp_mask(width))

    @property
    def width(self) -> int:
        return self.table.width

    def sampled_copies(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Pairs ``(copy, position in idx)`` of sampled edge copies."""
        idx = np.asarray(idx, dtype=np.int64)
        if self.copies == 1:
            return np.zeros(len(idx), dtype=np.int64), np.arange(len(idx))
        thr = bernoulli_threshold(self.rate)
        copies = np.arange(self.copies, dtype=np.int64)
        a, b = (h(copies)[:, None] for h in self.copy_coefs)
        vals = mod_mersenne(a + mod_mersenne(b * idx[None, :]))
        c, j = np.nonzero(vals < thr)
        return c.astype(np.int64), j.astype(np.int64)

    def update(self, idx: np.ndarray, delta: np.ndarray) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        delta = np.asarray(delta, dtype=np.int64)
        if idx.size == 0:
            return
        cp, j = self.sampled_copies(idx)
        if cp.size == 0:
            return
        e, d = idx[j], delta[j]
        m = len(e)
        coefs = np.array([h.coefs for h in self.level_hash], dtype=np.int64).T[:, :, None]
        depth = trailing_zeros(poly_eval(coefs, e[None, :]), self.levels - 1)  # (banks, m)
        f1 = modpow(self.z1[:, None], np.broadcast_to(e + 1, (self.banks, m)))
        f2 = modpow(self.z2[:, None], np.broadcast_to(e + 1, (self.banks, m)))
        rep = (depth + 1).ravel()
        flat = np.repeat(np.arange(self.banks * m), rep)  # index into (bank, edge)
        lvl = np.arange(len(flat)) - np.repeat(np.cumsum(rep) - rep, rep)
        bank, ent = np.divmod(flat, m)
        base = (bank * self.levels + lvl) * CELLS
        cols = (base[:, None] + np.arange(CELLS)[None, :]).reshape(-1)
        dd = d[ent]
        vals = np.stack([dd, dd * (e[ent] + 1), dd * f1.ravel()[flat], dd * f2.ravel()[flat]], axis=1).reshape(-1)
        u, v = edge_endpoints(e)
        ku = np.repeat(cp[ent] * self.n + u[ent], CELLS)
        kv = np.repeat(cp[ent] * self.n + v[ent], CELLS)
        self.table.add(np.concatenate([ku, kv]), np.concatenate([cols, cols]), np.concatenate([vals, -vals]))

    def copy(self) -> "ForestSketch":
        out = object.__new__(ForestSketch)
        out.__dict__.update(self.__dict__)
        out.table = self.table.copy()
        return out

    def decode(self, max_rounds: int | None = None) -> np.ndarray:
        """Borůvka over all copies at once; returns rows ``(copy, edge index)``."""
        self.table.compact()
        keys = self.table.keys
        if len(keys) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        rows = self.table.rows.reshape(len(keys), self.banks, self.levels, CELLS)
        n_keys = len(keys)
        parent = np.arange(n_keys)

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        forest = []
        max_rounds = max_rounds or 2 * self.levels + 4
        for rnd in range(max_rounds):
            labels = np.array([find(i) for i in range(n_keys)])
            roots, lab = np.unique(labels, return_inverse=True)
            sums = np.zeros((len(roots), self.banks, self.levels, CELLS), dtype=np.int64)
            np.add.at(sums, lab, rows)
            sums[..., FP1:] %= MERSENNE
            ok, idx, sign = one_sparse(sums, self.z1[None, :, None], self.z2[None, :, None], self.n_pairs)
            if not ok.any():
                break
            # structural check: the sampled edge must leave the component with the right sign
            root_copy = keys[roots] // self.n
            eu, ev = edge_endpoints(idx)
            ku = root_copy[:, None, None] * self.n + eu
            kv = root_copy[:, None, None] * self.n + ev
            pu = np.minimum(np.searchsorted(keys, ku), n_keys - 1)
            pv = np.minimum(np.searchsorted(keys, kv), n_keys - 1)
            ok &= (keys[pu] == ku) & (keys[pv] == kv)
            in_u = lab[pu] == np.arange(len(roots))[:, None, None]
            in_v = lab[pv] == np.arange(len(roots))[:, None, None]
            ok &= (in_u != in_v) & np.where(in_u, sign > 0, sign < 0)
            flat = ok.reshape(len(roots), -1)
            has = flat.any(axis=1)
            if not has.any():
                break
            # rotate the preferred bank between rounds
            shift = (rnd % self.banks) * self.levels
            rolled = np.roll(flat, -shift, axis=1)
            pick = (np.argmax(rolled, axis=1) + shift) % flat.shape[1]
            merged = False
            for ridx in np.flatnonzero(has):
                b, lv = divmod(int(pick[ridx]), self.levels)
                a, c = find(int(pu[ridx, b, lv])), find(int(pv[ridx, b, lv]))
                if a != c:
                    parent[a] = c
                    forest.append((int(root_copy[ridx]), int(idx[ridx, b, lv])))
                    merged = True
            if not merged:
                break
        if not forest:
            return np.zeros((0, 2), dtype=np.int64)
        return np.unique(np.array(forest, dtype=np.int64), axis=0)


class RecoverySketch:
    """Invertible-Bloom-style ``k``-sparse recovery of each vertex's incidence column."""

    def __init__(self, n: int, capacity: int, seed: bytes, label: str, rows: int | None = None):
        self.n = n
        self.n_pairs = max(num_pairs(n), 1)
        self.capacity = max(1, capacity)
        k = max(2, math.ceil(math.log2(max(n, 2))))
        # two edges sharing a bucket in every row can never be peeled apart;
        # log n rows make that a 1/poly(n) event
        self.rows = rows or max(4, k)
        # the log n slack keeps small capacities from colliding in every row
        self.buckets = 2 * self.capacity + 2 * k
        self.bucket_hash = [HashFamily.from_seed(seed, f"{label}/bucket/{r}", k) for r in range(self.rows)]
        zs = _draw_ints(None, seed, f"{label}/fp", 2)
        self.z1, self.z2 = _fingerprint_base(zs)
        width = self.rows * self.buckets * CELLS
        self.table = CellTable(width, _fp_mask(width))

    def _columns(self, e: np.ndarray) -> np.ndarray:
        """Cell-block offsets ``(len(e), rows)`` for each edge."""
        return np.stack([(r * self.buckets + self.bucket_hash[r](e) % self.buckets) * CELLS
                         for r in range(self.rows)], axis=1)

    def update(self, idx: np.ndarray, delta: np.ndarray) -> None:
        e = np.asarray(idx, dtype=np.int64)
        if e.size == 0:
            return
        d = np.asarray(delta, dtype=np.int64)
        u, v = edge_endpoints(e)
        off = self._columns(e)
        f1 = modpow(self.z1, e + 1)
        f2 = modpow(self.z2, e + 1)
        vals = np.stack([d, d * (e + 1), d * f1, d * f2], axis=1)
        keys, cols, out = [], [], []
        for vert, s in ((u, 1), (v, -1)):
            keys.append(np.repeat(vert, self.rows * CELLS))
            cols.append((off[:, :, None] + np.arange(CELLS)[None, None, :]).reshape(-1))
            out.append(np.repeat((vals * s)[:, None, :], self.rows, axis=1).reshape(-1))
        self.table.add(np.concatenate(keys), np.concatenate(cols), np.concatenate(out))

    def recover(self, v: int, degree: int) -> list[int]:
        if degree > self.capacity:
            raise CapacityExceeded(f"vertex {v} has degree {degree} > capacity {self.capacity}")
        cells = self.table.get([v])[0].reshape(self.rows * self.buckets, CELLS).copy()
        found: list[int] = []
        for _ in range(degree + 1):
            ok, idx, sign = one_sparse(cells, self.z1, self.z2, self.n_pairs)
            if ok.any():
                eu, ev = edge_endpoints(idx)
                ok &= ((eu == v) & (sign > 0)) | ((ev == v) & (sign < 0))
            if not ok.any():
                break
            new = np.unique(idx[ok])
            s = np.where(edge_endpoints(new)[0] == v, 1, -1)
            pos = (self._columns(new) // CELLS).reshape(-1)
            vals = np.stack([s, s * (new + 1), s * modpow(self.z1, new + 1), s * modpow(self.z2, new + 1)], axis=1)
            np.add.at(cells, pos, -np.repeat(vals, self.rows, axis=0))
            cells[:, FP1:] %= MERSENNE
            found.extend(new.tolist())
        if np.any(cells):
            raise DecodeFailure(f"sparse recovery for vertex {v} left undecoded cells")
        return sorted(found)

    def copy(self) -> "RecoverySketch":
        out = object.__new__(RecoverySketch)
        out.__dict__.update(self.__dict__)
        out.table = self.table.copy()
        return out


def heavy_hitter_width(eta: float, cap: int | None = 256) -> int:
    w = 1 << max(1, math.ceil(math.log2(4.0 / eta ** 2)))
    return min(w, cap) if cap else w


class HeavyHitterSketch:
    """Count-sketch of ``B phi`` with bit planes for index recovery.

    Row ``r`` hashes edge ``e`` to bucket ``h_r(e)`` with sign ``s_r(e)``.
    Plane 0 holds the signed value, plane ``1 + j`` only the edges whose
    index has bit ``j`` set.
    """

    def __init__(self, n: int, width: int, depth: int, alloc: Allocator):
        self.n = n
        self.n_pairs = max(num_pairs(n), 1)
        self.width_buckets = width
        self.depth = depth
        self.planes = 1 + max(1, math.ceil(math.log2(self.n_pairs)))
        self.bucket_hash = [HashFamily.from_chain(alloc, 4) for _ in range(depth)]
        self.sign_hash = [HashFamily.from_chain(alloc, 4) for _ in range(depth)]
        self.table = CellTable(depth * width * self.planes)

    @property
    def min_eta(self) -> float:
        """Smallest heaviness this width can certify."""
        return 2.0 / math.sqrt(self.width_buckets)

    def _hash(self, e: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        b = np.stack([h(e) % self.width_buckets for h in self.bucket_hash])
        s = np.stack([1 - 2 * (h(e) & 1) for h in self.sign_hash])
        return b, s

    def update(self, idx: np.ndarray, delta: np.ndarray) -> None:
        e = np.asarray(idx, dtype=np.int64)
        if e.size == 0:
            return
        d = np.asarray(delta, dtype=np.int64)
        u, v = edge_endpoints(e)
        b, s = self._hash(e)  # (depth, m)
        bits = (e[None, :] >> np.arange(self.planes - 1)[:, None]) & 1  # (planes-1, m)
        plane_w = np.concatenate([np.ones((1, len(e)), dtype=np.int64), bits])  # (planes, m)
        base = (np.arange(self.depth)[:, None] * self.width_buckets + b) * self.planes  # (depth, m)
        cols = base[:, None, :] + np.arange(self.planes)[None, :, None]  # (depth, planes, m)
        vals = s[:, None, :] * plane_w[None, :, :] * d[None, None, :]
        cols = np.moveaxis(cols, 2, 0).reshape(len(e), -1)
        vals = np.moveaxis(vals, 2, 0).reshape(len(e), -1)
        self.table.add(np.concatenate([np.repeat(u, cols.shape[1]), np.repeat(v, cols.shape[1])]),
                       np.concatenate([cols.ravel(), cols.ravel()]),
                       np.concatenate([vals.ravel(), -vals.ravel()]))

    def is_empty(self) -> bool:
        return self.table.is_empty()

    def dense_columns(self) -> np.ndarray:
        """``(n, cells)`` matrix of per-vertex sketch columns."""
        out = np.zeros((self.n, self.table.width))
        out[self.table.keys] = self.table.rows
        return out

    def apply(self, phis: np.ndarray) -> np.ndarray:
        """Sketch values for each column of ``phis`` (shape ``(cells, k)``)."""
        return self.dense_columns().T @ phis

    @property
    def votes(self) -> int:
        """Rows that must independently decode an index before it is trusted."""
        return self.depth // 2 + 1 if self.depth >= 3 else 1

    def _decode(self, total: np.ndarray, planes_of, eta: float, phi_at=None) -> tuple[np.ndarray, np.ndarray]:
        """Core decoder over plane-0 values ``total`` of shape ``(depth, w, k)``.

        ``planes_of(r, b, c)`` returns the bit planes of the given cells.
        Returns accepted ``(column, edge index)`` pairs.
        """
        empty = np.empty(0, dtype=np.int64)
        eta = max(eta, self.min_eta)
        norm = np.median(np.sqrt(np.sum(total ** 2, axis=1)), axis=0)  # (k,)
        cut = eta * norm
        r_idx, b_idx, c_idx = np.nonzero((np.abs(total) >= cut[None, None, :]) & (norm[None, None, :] > 0))
        if len(r_idx) == 0:
            return empty, empty
        t = total[r_idx, b_idx, c_idx]
        bits = np.abs(planes_of(r_idx, b_idx, c_idx)) > np.abs(t)[:, None] / 2
        idx = bits.astype(np.int64) @ (np.int64(1) << np.arange(self.planes - 1, dtype=np.int64))
        keep = idx < self.n_pairs
        r_idx, c_idx, idx = r_idx[keep], c_idx[keep], idx[keep]
        if len(idx) == 0:
            return empty, empty
        # the bucket a decoded index claims must be where that index hashes
        b_all, s_all = self._hash(idx)
        keep = b_all[r_idx, np.arange(len(idx))] == b_idx[keep]
        # one int64 key per (column, index, row) keeps the vote count a 1-d unique
        pair_key = c_idx[keep] * self.n_pairs + idx[keep]
        trip = np.unique(pair_key * self.depth + r_idx[keep])
        if len(trip) == 0:
            return empty, empty
        keys, counts = np.unique(trip // self.depth, return_counts=True)
        keys = keys[counts >= self.votes]
        if len(keys) == 0:
            return empty, empty
        cols, eidx = np.divmod(keys, self.n_pairs)
        b, s = self._hash(eidx)
        est = np.median(s * total[np.arange(self.depth)[:, None], b, cols[None, :]], axis=0)
        good = np.abs(est) >= eta * norm[cols]
        a, c = edge_endpoints(eidx)
        good &= a != c
        if phi_at is not None:
            expect = phi_at(cols, a, c)
            good &= np.abs(est - expect) <= 0.5 * np.abs(expect)
        return cols[good], eidx[good]

    def decode_values(self, z: np.ndarray, eta: float, phi_at=None) -> list[set[int]]:
        """Decode sketch values ``z`` (``(cells, k)``) into heavy edge indices per column.

        ``phi_at(cols, a, b)``, when given, returns the potential drop the
        decoder expects on edge ``(a, b)`` for value column ``cols``; a
        present edge carries exactly that value, so estimates that disagree
        with it by more than half are discarded.
        """
        k = z.shape[1]
        cube = z.reshape(self.depth, self.width_buckets, self.planes, k)
        cols, eidx = self._decode(cube[:, :, 0, :], lambda r, b, c: cube[r, b, 1:, c], eta, phi_at)
        results: list[set[int]] = [set() for _ in range(k)]
        for col, e in zip(cols.tolist(), eidx.tolist()):
            results[col].add(e)
        return results

    def decode(self, phi: np.ndarray, eta: float) -> set[int]:
        phi = np.asarray(phi, dtype=np.float64)
        if not np.all(np.isfinite(phi)):
            raise ValueError("potentials must be finite")
        z = self.apply(phi[:, None])
        return self.decode_values(z, eta, lambda cols, a, b: phi[a] - phi[b])[0]

    def decode_potentials(self, phis: np.ndarray, eta: float, chunk: int = 2048) -> set[int]:
        """Union of decodes for every column of ``phis`` (``(n, k)``)."""
        out: set[int] = set()
        cols_t = self.dense_columns().T
        for lo in range(0, phis.shape[1], chunk):
            block = phis[:, lo:lo + chunk]
            z = cols_t @ block
            for found in self.decode_values(z, eta, lambda c, a, b: block[a, c] - block[b, c]):
                out |= found
        return out

    def decode_pairs(self, pinv: np.ndarray, pairs: np.ndarray, eta: float, chunk: int = 8192) -> set[EdgeKey]:
        """Decode ``pinv (chi_u - chi_v)`` for every row ``(u, v)`` of ``pairs``."""
        pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        zall = (self.dense_columns().T @ pinv).reshape(self.depth, self.width_buckets, self.planes, -1)
        z0 = zall[:, :, 0, :]
        out: set[int] = set()
        for lo in range(0, len(pairs), chunk):
            pu, pv = pairs[lo:lo + chunk, 0], pairs[lo:lo + chunk, 1]
            total = z0[:, :, pu] - z0[:, :, pv]

            def planes_of(r, b, c, pu=pu, pv=pv):
                return zall[r, b, 1:, pu[c]] - zall[r, b, 1:, pv[c]]

            def phi_at(cols, a, b, pu=pu, pv=pv):
                su, sv = pu[cols], pv[cols]
                return pinv[a, su] - pinv[a, sv] - pinv[b, su] + pinv[b, sv]

            _, eidx = self._decode(total, planes_of, eta, phi_at)
            out.update(eidx.tolist())
        return {EdgeKey.from_index(e) for e in out}

    def copy(self) -> "HeavyHitterSketch":
        out = object.__new__(HeavyHitterSketch)
        out.__dict__.update(self.__dict__)
        out.table = self.table.copy()
        return out


@dataclass(frozen=True)
class NodeLayout:
    """What one tree node sketches and how it samples from its parent."""

    kind: str
    level: int
    reg_level: int
    parent: int
    rate: float
    forest: bool = False
    recovery: int = 0
    flce_lambda: int = 0
    flce_copies: int = 0
    hh_width: int = 0
    hh_depth: int = 0

    @property
    def has_sketches(self) -> bool:
        return bool(self.forest or self.recovery or self.flce_copies or self.hh_width)


@dataclass
class NodeSketch:
    layout: NodeLayout
    degree: np.ndarray
    sample_hash: HashFamily | None = None
    forest: ForestSketch | None = None
    recovery: RecoverySketch | None = None
    flce: ForestSketch | None = None
    heavy: HeavyHitterSketch | None = None

    def structures(self) -> list:
        return [s for s in (self.forest, self.recovery, self.flce, self.heavy) if s is not None]

    def update(self, idx: np.ndarray, delta: np.ndarray) -> None:
        if idx.size == 0:
            return
        u, v = edge_endpoints(idx)
        np.add.at(self.degree, u, delta)
        np.add.at(self.degree, v, delta)
        for s in self.structures():
            s.update(idx, delta)

    def copy(self) -> "NodeSketch":
        return NodeSketch(self.layout, self.degree.copy(), self.sample_hash,
                          *(s.copy() if s is not None else None
                            for s in (self.forest, self.recovery, self.flce, self.heavy)))


def forest_banks(n: int) -> int:
    return 2 * max(1, math.ceil(math.log2(max(n, 2)))) + 2


FLCE_BANKS = 2


@dataclass
class SketchStack:
    """Sketches for every tree node, updated together from one stream."""

    n: int
    seed: bytes
    gamma_base: float
    layouts: list[NodeLayout]
    nodes: list[NodeSketch] = field(default_factory=list)
    children: list[list[int]] = field(default_factory=list)
    debug: bool = False
    shadow: set = field(default_factory=set)
    touched: list = field(default_factory=list)

    @classmethod
    def build(cls, n: int, seed: bytes, gamma_base: float, layouts: list[NodeLayout],
              alloc: Allocator, debug: bool = False) -> "SketchStack":
        stack = cls(n, seed, gamma_base, list(layouts), debug=debug)
        stack.children = [[] for _ in layouts]
        k = max(2, math.ceil(math.log2(max(n, 2))))
        for i, lay in enumerate(layouts):
            if lay.parent >= 0:
                stack.children[lay.parent].append(i)
            node = NodeSketch(lay, np.zeros(n, dtype=np.int64))
            if lay.rate < 1:
                node.sample_hash = HashFamily.from_chain(alloc, k)
            if lay.forest:
                node.forest = ForestSketch(n, forest_banks(n), alloc)
            if lay.recovery:
                node.recovery = RecoverySketch(n, lay.recovery, seed, f"node{i}/sr")
            if lay.flce_copies:
                node.flce = ForestSketch(n, FLCE_BANKS, alloc, lay.flce_copies, 1.0 / (10 * lay.flce_lambda))
            if lay.hh_width:
                node.heavy = HeavyHitterSketch(n, lay.hh_width, lay.hh_depth, alloc)
            stack.nodes.append(node)
        return stack

    def subtree(self, root: int) -> list[int]:
        out, todo = [], [root]
        while todo:
            a = todo.pop()
            out.append(a)
            todo.extend(self.children[a])
        return sorted(out)

    def membership(self, idx: np.ndarray, root: int = 0, base: np.ndarray | None = None) -> dict[int, np.ndarray]:
        """Which of the edges ``idx`` each node in ``root``'s subtree samples."""
        idx = np.asarray(idx, dtype=np.int64)
        masks: dict[int, np.ndarray] = {}
        order = self.subtree(root)
        for a in order:
            lay = self.layouts[a]
            if a == root:
                mask = np.ones(len(idx), dtype=bool) if base is None else base.copy()
                if a != 0 and base is None:
                    # recompute the path from the top so the mask matches the node exactly
                    mask = self._path_mask(a, idx)
            else:
                mask = masks[lay.parent].copy()
            if a != root or base is not None:
                if self.nodes[a].sample_hash is not None:
                    mask &= np.asarray(self.nodes[a].sample_hash(idx)) < bernoulli_threshold(lay.rate)
            masks[a] = mask
        return masks

    def _path_mask(self, a: int, idx: np.ndarray) -> np.ndarray:
        path = []
        while a >= 0:
            path.append(a)
            a = self.layouts[a].parent
        mask = np.ones(len(idx), dtype=bool)
        for b in reversed(path):
            h = self.nodes[b].sample_hash
            if h is not None:
                mask &= np.asarray(h(idx)) < bernoulli_threshold(self.layouts[b].rate)
        return mask

    def apply_updates(self, idx, deltas) -> None:
        idx = np.asarray(idx, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        if self.debug:
            for e, d in zip(idx.tolist(), deltas.tolist()):
                if d > 0:
                    if e in self.shadow:
                        raise StreamViolation(f"edge {EdgeKey.from_index(e)} inserted twice")
                    self.shadow.add(e)
                else:
                    if e not in self.shadow:
                        raise StreamViolation(f"edge {EdgeKey.from_index(e)} deleted while absent")
                    self.shadow.remove(e)
        masks = self._path_masks(idx)
        self.touched = []
        for a, node in enumerate(self.nodes):
            m = masks[a]
            if m.any():
                self.touched.append(a)
                node.update(idx[m], deltas[m])

    def _path_masks(self, idx: np.ndarray) -> list[np.ndarray]:
        masks: list[np.ndarray] = []
        thr = {}
        for a, lay in enumerate(self.layouts):
            mask = np.ones(len(idx), dtype=bool) if lay.parent < 0 else masks[lay.parent].copy()
            h = self.nodes[a].sample_hash
            if h is not None and mask.any():
                if lay.rate not in thr:
                    thr[lay.rate] = bernoulli_threshold(lay.rate)
                mask[mask] = np.asarray(h(idx[mask])) < thr[lay.rate]
            masks.append(mask)
        return masks

    def apply_update(self, e: EdgeKey, delta: int) -> None:
        self.apply_updates([e.linear_index], [delta])

    def subtract_edges(self, root: int, edges) -> None:
        """Remove ``edges`` (present in node ``root``) from its whole subtree."""
        idx = np.array(sorted({(e.linear_index if isinstance(e, EdgeKey) else int(e)) for e in edges}),
                       dtype=np.int64)
        if idx.size == 0:
            return
        if self.debug:
            missing = [e for e in idx.tolist() if e not in self.shadow]
            if missing:
                raise StreamViolation(f"subtracting absent edge {EdgeKey.from_index(missing[0])}")
        base = np.ones(len(idx), dtype=bool)
        for a in self.subtree(root):
            if a == root:
                mask = base
            else:
                mask = self._relative_mask(root, a, idx)
            if mask.any():
                self.nodes[a].update(idx[mask], -np.ones(int(mask.sum()), dtype=np.int64))

    def _relative_mask(self, root: int, a: int, idx: np.ndarray) -> np.ndarray:
        path = []
        while a != root:
            path.append(a)
            a = self.layouts[a].parent
        mask = np.ones(len(idx), dtype=bool)
        for b in reversed(path):
            h = self.nodes[b].sample_hash
            if h is not None:
                mask &= np.asarray(h(idx)) < bernoulli_threshold(self.layouts[b].rate)
        return mask

    def copy(self) -> "SketchStack":
        out = SketchStack(self.n, self.seed, self.gamma_base, self.layouts,
                          [node.copy() for node in self.nodes], self.children, self.debug, set(self.shadow))
        return out

    def copy_subtree(self, root: int) -> "SketchStack":
        """A stack sharing layouts whose subtree of ``root`` is a private copy."""
        out = SketchStack(self.n, self.seed, self.gamma_base, self.layouts, list(self.nodes),
                          self.children, self.debug, set(self.shadow))
        for a in self.subtree(root):
            out.nodes[a] = self.nodes[a].copy()
        return out

    def merge(self, other: "SketchStack") -> None:
        """Cell-wise sum with a stack built from the same seed and layout."""
        if other.layouts != self.layouts or other.seed != self.seed:
            raise ValueError("stacks differ in seed or layout")
        for mine, theirs in zip(self.nodes, other.nodes):
            mine.degree += theirs.degree
            for a, b in zip(mine.structures(), theirs.structures()):
                a.table.merge(b.table)
        self.shadow ^= other.shadow

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        out.write(struct.pack("<qdi", self.n, float(self.gamma_base), len(self.seed)))
        out.write(self.seed)
        out.write(struct.pack("<i", len(self.layouts)))
        for lay in self.layouts:
            out.write(struct.pack("<Biiid", 0 if lay.kind == "sparsify" else 1, lay.level,
                                  lay.reg_level, lay.parent, lay.rate))
        for node in self.nodes:
            out.write(node.degree.astype("<i8").tobytes())
            flags = [node.forest, node.recovery, node.flce, node.heavy]
            out.write(bytes(int(s is not None) for s in flags))
            for s in node.structures():
                out.write(s.table.to_bytes())
        return out.getvalue()

    def __eq__(self, other) -> bool:
        return isinstance(other, SketchStack) and self.to_bytes() == other.to_bytes()


def restore_tables(stack: SketchStack, data: bytes) -> None:
    """Load cell tables from a checkpoint into a stack built with the same seed and layout."""
    buf = io.BytesIO(data)
    if buf.read(len(MAGIC)) != MAGIC:
        raise ValueError("not a sketch checkpoint")
    n, gamma_base, seed_len = struct.unpack("<qdi", buf.read(20))
    seed = buf.read(seed_len)
    if n != stack.n or seed != stack.seed or gamma_base != stack.gamma_base:
        raise ValueError("checkpoint was written for different parameters")
    (count,) = struct.unpack("<i", buf.read(4))
    if count != len(stack.layouts):
        raise ValueError("checkpoint tree shape differs")
    buf.read(count * struct.calcsize("<Biiid"))
    for node in stack.nodes:
        node.degree = np.frombuffer(buf.read(8 * n), dtype="<i8").astype(np.int64)
        flags = buf.read(4)
        for flag, name in zip(flags, ("forest", "recovery", "flce", "heavy")):
            if flag:
                sk = getattr(node, name)
                sk.table = CellTable.read(buf, sk.table.mod_cols)


def spanning_forest(sk: ForestSketch) -> set[EdgeKey]:
    rows = sk.decode()
    return {EdgeKey.from_index(int(e)) for e in rows[:, 1]}


def find_low_connectivity_edges(sk: ForestSketch) -> set[EdgeKey]:
    """Union of spanning forests of every subsampled copy."""
    rows = sk.decode()
    return {EdgeKey.from_index(int(e)) for e in np.unique(rows[:, 1])}


def flce_copies(lam: int, n: int, constant: float = 200.0) -> int:
    return max(1, math.ceil(constant * lam * math.log2(max(n, 2))))


def sparse_recover_neighbors(node: NodeSketch, v: int) -> set[EdgeKey]:
    if node.recovery is None:
        raise ValueError("node has no recovery sketch")
    found = node.recovery.recover(v, int(node.degree[v]))
    return {EdgeKey.from_index(e) for e in found}


def heavy_hitter_decode(sk: HeavyHitterSketch, phi: np.ndarray, eta: float) -> set[EdgeKey]:
    return {EdgeKey.from_index(e) for e in sk.decode(phi, eta)}
