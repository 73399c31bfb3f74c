"""Seed-expanding randomness for the sketches.

Two sources are provided:

* :class:`PrgChain`, a multilevel Nisan-Zuckerman generator.  Each level
  applies a locally computable extractor to a shared block ``X`` with
  per-block seeds ``Y_i``; a level's tape (``X`` followed by the ``Y_i``) is
  produced by the level above it, and only the top level reads true seed
  bits.  Any output bit can be addressed directly.
* :class:`HashFamily`, polynomial ``k``-wise independent hashing over the
  Mersenne prime field, with coefficients read either from a chain or from a
  keyed hash of the seed (for structures the decoder must revisit).

The extractor used here is a block-local XOR-fold.  It honours the
interface, determinism and locality requirements but is not a proof-grade
extractor.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

MERSENNE = (1 << 31) - 1
COEF_BITS = 31
SEED_BITS = 4 * COEF_BITS
FOLD = 4
CHUNK_BITS = 4096


class LengthMismatch(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def parse_seed(seed) -> bytes:
    if isinstance(seed, bytes):
        return seed
    if isinstance(seed, int):
        seed = format(seed, "x")
    text = str(seed).lower().removeprefix("0x")
    if len(text) % 2:
        text = "0" + text
    return bytes.fromhex(text)


def bits_to_ints(bits: np.ndarray, width: int) -> np.ndarray:
    """Big-endian integers from consecutive ``width``-bit groups."""
    bits = np.asarray(bits, dtype=np.int64).reshape(-1, width)
    weights = np.int64(1) << np.arange(width - 1, -1, -1, dtype=np.int64)
    return bits @ weights


def pack_words(bits: np.ndarray) -> np.ndarray:
    """Pack a 0/1 array (length divisible by 32) into big-endian uint32 words."""
    return bits_to_ints(bits, 32).astype(np.uint32)


def mod_mersenne(x: np.ndarray) -> np.ndarray:
    """``x mod 2^31 - 1`` for non-negative int64 ``x`` by folding the high bits."""
    x = (x & MERSENNE) + (x >> 31)
    x = (x & MERSENNE) + (x >> 31)
    return np.where(x >= MERSENNE, x - MERSENNE, x)


def poly_eval(coefs: np.ndarray, keys: np.ndarray) -> np.ndarray:
    """Evaluate ``sum_k coefs[k] * key**k mod p`` by Horner's rule.

    ``coefs`` is either 1-d (one polynomial) or shaped ``(k, ...)`` with the
    trailing axes broadcasting against ``keys``.
    """
    keys = np.asarray(keys, dtype=np.int64)
    coefs = np.asarray(coefs, dtype=np.int64)
    acc = np.zeros(np.broadcast_shapes(keys.shape, coefs.shape[1:]), dtype=np.int64)
    for c in coefs[::-1]:
        acc = mod_mersenne(acc * keys + c)
    return acc


@dataclass(frozen=True)
class ExtractorSpec:
    n_bits: int
    out_bits: int
    seed_bits: int = SEED_BITS
    eps: float = 0.0

    def __post_init__(self):
        if self.n_bits % 32 or self.n_bits <= 0:
            raise ValueError("input length must be a positive multiple of 32")
        if self.out_bits > self.n_bits:
            raise ValueError("cannot output more bits than the input holds")
        if self.seed_bits != SEED_BITS:
            raise ValueError(f"seed length is fixed at {SEED_BITS} bits")

    @property
    def locality(self) -> int:
        """Bits of ``x`` and ``y`` read to produce one output bit."""
        return FOLD * 32 + self.seed_bits


def _seed_coefs(y_bits: np.ndarray) -> np.ndarray:
    return bits_to_ints(y_bits, COEF_BITS) % MERSENNE


def _fold_bits(words: np.ndarray, coefs: np.ndarray, out_idx: np.ndarray) -> np.ndarray:
    """Output bits ``out_idx`` given packed ``x`` and per-bit seed coefficients.

    ``coefs`` has shape ``(4, len(out_idx))``.  Bit ``o`` is the XOR over
    ``t < FOLD`` of the parity of ``x_word[g(2z)] & mask(g(2z+1))`` with
    ``z = FOLD*o + t``.
    """
    n_words = len(words)
    out = np.zeros(len(out_idx), dtype=np.uint32)
    for t in range(FOLD):
        z = out_idx.astype(np.int64) * FOLD + t
        where = poly_eval(coefs, 2 * z) % n_words
        g = poly_eval(coefs, 2 * z + 1).astype(np.uint64)
        mask = (((g << np.uint64(1)) | (g >> np.uint64(30))) & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        out ^= np.bitwise_count(words[where] & mask).astype(np.uint32) & 1
    return out.astype(np.uint8)


def extract(x: np.ndarray, y: np.ndarray, spec: ExtractorSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.uint8)
    y = np.asarray(y, dtype=np.uint8)
    if len(x) != spec.n_bits or len(y) != spec.seed_bits:
        raise LengthMismatch(f"expected ({spec.n_bits}, {spec.seed_bits}) bits, got ({len(x)}, {len(y)})")
    coefs = _seed_coefs(y)
    idx = np.arange(spec.out_bits)
    return _fold_bits(pack_words(x), np.repeat(coefs[:, None], len(idx), axis=1), idx)


def extract_bit(x: np.ndarray, y: np.ndarray, spec: ExtractorSpec, j: int,
                touched: list | None = None) -> int:
    """Single output bit; records the positions of ``x`` that were read."""
    if not 0 <= j < spec.out_bits:
        raise IndexOutOfRange(j)
    coefs = _seed_coefs(np.asarray(y, dtype=np.uint8))
    n_words = spec.n_bits // 32
    bit = 0
    for t in range(FOLD):
        z = j * FOLD + t
        w = int(poly_eval(coefs, np.array([2 * z]))[0]) % n_words
        g = int(poly_eval(coefs, np.array([2 * z + 1]))[0])
        mask = ((g << 1) | (g >> 30)) & 0xFFFFFFFF
        word = int(pack_words(np.asarray(x[32 * w:32 * w + 32], dtype=np.uint8))[0])
        if touched is not None:
            touched.extend(range(32 * w, 32 * w + 32))
        bit ^= (word & mask).bit_count() & 1
    return bit


@dataclass
class NzLevel:
    """One generator: output block ``i`` is ``extract(X, Y_i)``.

    The level's tape is ``X`` (``n_bits``) followed by ``blocks`` seeds of
    ``SEED_BITS`` each.
    """

    space: int
    n_bits: int
    block_bits: int
    blocks: int
    nominal_output: int

    @property
    def spec(self) -> ExtractorSpec:
        return ExtractorSpec(self.n_bits, self.block_bits)

    @property
    def tape_bits(self) -> int:
        return self.n_bits + self.blocks * SEED_BITS

    @property
    def output_bits(self) -> int:
        return self.blocks * self.block_bits


@dataclass
class PrgChain:
    """Levels ``0..omega``; level 0 serves requests, level omega reads the seed."""

    seed: bytes
    space: int
    exponent: float
    levels: list[NzLevel]
    _top: np.ndarray = field(repr=False, default=None)
    _x_cache: dict = field(repr=False, default_factory=dict)
    _chunks: dict = field(repr=False, default_factory=dict)

    @classmethod
    def create(cls, seed, space: int = 1 << 10, exponent: float = 2.0,
               output_bits: int | None = None) -> "PrgChain":
        seed = parse_seed(seed)
        omega = math.ceil(exponent / 0.9)
        need = output_bits if output_bits is not None else int(round(space ** exponent))
        levels = []
        for i in range(omega + 1):
            s_i = 9 ** i * space
            nominal = max(1, int(round(space ** (exponent - 0.9 * i))))
            n_bits = 2 * s_i
            # a level must at least feed the level below, whatever its nominal budget
            required = max(nominal, need)
            blocks = max(1, math.ceil(required / s_i))
            levels.append(NzLevel(s_i, n_bits, s_i, blocks, nominal))
            need = levels[-1].tape_bits
        return cls(seed, space, exponent, levels)

    @property
    def omega(self) -> int:
        return len(self.levels) - 1

    @property
    def length(self) -> int:
        return self.levels[0].output_bits

    @property
    def true_seed_bits(self) -> int:
        return self.levels[-1].tape_bits

    def _top_tape(self) -> np.ndarray:
        if self._top is None:
            n = self.true_seed_bits
            raw = hashlib.shake_256(b"nz-top|" + self.seed).digest((n + 7) // 8)
            self._top = np.unpackbits(np.frombuffer(raw, dtype=np.uint8))[:n]
        return self._top

    def tape(self, level: int, positions: np.ndarray) -> np.ndarray:
        """Bits of level ``level``'s tape at ``positions``."""
        positions = np.asarray(positions, dtype=np.int64)
        if level == self.omega:
            return self._top_tape()[positions]
        return self.output(level + 1, positions)

    def _x_words(self, level: int) -> np.ndarray:
        if level not in self._x_cache:
            lv = self.levels[level]
            self._x_cache[level] = pack_words(self.tape(level, np.arange(lv.n_bits)))
        return self._x_cache[level]

    def _compute(self, level: int, positions: np.ndarray) -> np.ndarray:
        lv = self.levels[level]
        block = positions // lv.block_bits
        offset = positions % lv.block_bits
        ublocks, inv = np.unique(block, return_inverse=True)
        seed_pos = lv.n_bits + ublocks[:, None] * SEED_BITS + np.arange(SEED_BITS)[None, :]
        ybits = self.tape(level, seed_pos.ravel()).reshape(len(ublocks), SEED_BITS)
        coefs = np.stack([_seed_coefs(row) for row in ybits])  # (blocks, 4)
        return _fold_bits(self._x_words(level), coefs[inv].T, offset)

    def output(self, level: int, positions: np.ndarray) -> np.ndarray:
        """Output bits of generator ``level``, materialised in cached chunks."""
        positions = np.asarray(positions, dtype=np.int64)
        lv = self.levels[level]
        if positions.size and (positions.min() < 0 or positions.max() >= lv.output_bits):
            raise IndexOutOfRange(f"level {level} produces {lv.output_bits} bits")
        chunk_ids = positions // CHUNK_BITS
        out = np.empty(positions.shape, dtype=np.uint8)
        for cid in np.unique(chunk_ids):
            key = (level, int(cid))
            if key not in self._chunks:
                lo = int(cid) * CHUNK_BITS
                hi = min(lo + CHUNK_BITS, lv.output_bits)
                self._chunks[key] = self._compute(level, np.arange(lo, hi))
            sel = chunk_ids == cid
            out[sel] = self._chunks[key][positions[sel] - int(cid) * CHUNK_BITS]
        return out

    def bits(self, offset: int, count: int) -> np.ndarray:
        return self.output(0, np.arange(offset, offset + count))

    def ints(self, offset: int, count: int, width: int = COEF_BITS) -> np.ndarray:
        return bits_to_ints(self.bits(offset, count * width), width)


def prg_bit(chain: PrgChain, index: int, counter: dict | None = None) -> int:
    """Bit ``index`` of the generator, computed on the single-bit path.

    Tape bits of the serving level are read one extractor call's worth at a
    time; ``counter['touched']`` receives the number of tape bits read.
    """
    if not 0 <= index < chain.length:
        raise IndexOutOfRange(f"index {index} outside [0, {chain.length})")
    lv = chain.levels[0]
    block, offset = divmod(index, lv.block_bits)
    ypos = lv.n_bits + block * SEED_BITS + np.arange(SEED_BITS)
    y = chain.tape(0, ypos)
    coefs = _seed_coefs(y)
    n_words = lv.n_bits // 32
    bit = 0
    touched = SEED_BITS
    for t in range(FOLD):
        z = offset * FOLD + t
        w = int(poly_eval(coefs, np.array([2 * z]))[0]) % n_words
        g = int(poly_eval(coefs, np.array([2 * z + 1]))[0])
        mask = ((g << 1) | (g >> 30)) & 0xFFFFFFFF
        word = int(pack_words(chain.tape(0, np.arange(32 * w, 32 * w + 32)))[0])
        touched += 32
        bit ^= (word & mask).bit_count() & 1
    if counter is not None:
        counter["touched"] = counter.get("touched", 0) + touched
    return bit


class Allocator:
    """Hands out disjoint bit ranges of a chain in a fixed order."""

    def __init__(self, chain: PrgChain):
        self.chain = chain
        self.cursor = 0

    def take(self, nbits: int) -> int:
        start = self.cursor
        self.cursor += nbits
        if self.cursor > self.chain.length:
            raise IndexOutOfRange("pseudorandom budget exhausted; raise the chain exponent")
        return start


@dataclass(frozen=True)
class HashFamily:
    """Degree ``k-1`` polynomial over GF(2^31 - 1); ``k=2`` is pairwise."""

    coefs: tuple

    @property
    def k(self) -> int:
        return len(self.coefs)

    @property
    def kind(self) -> str:
        return "pairwise" if self.k == 2 else f"{self.k}-wise"

    @classmethod
    def from_chain(cls, alloc: Allocator, k: int) -> "HashFamily":
        off = alloc.take(k * COEF_BITS)
        vals = alloc.chain.ints(off, k) % MERSENNE
        return cls(tuple(int(c) for c in vals))

    @classmethod
    def from_seed(cls, seed: bytes, label: str, k: int) -> "HashFamily":
        raw = hashlib.shake_256(b"kwise|" + seed + b"|" + label.encode()).digest(8 * k)
        vals = np.frombuffer(raw, dtype="<u8") % np.uint64(MERSENNE)
        return cls(tuple(int(c) for c in vals))

    def __call__(self, keys) -> np.ndarray:
        return hash_eval(self, keys)


def hash_eval(h: HashFamily, keys):
    arr = np.asarray(keys, dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= MERSENNE):
        raise ValueError("hash keys must lie in [0, 2^31 - 1)")
    out = poly_eval(np.array(h.coefs, dtype=np.int64), arr)
    return int(out) if np.ndim(keys) == 0 else out


def bernoulli_threshold(p: float) -> int:
    return int(round(min(max(p, 0.0), 1.0) * MERSENNE))


def bernoulli(h: HashFamily, keys, p: float) -> np.ndarray:
    """``h(key) < p * field``: marginal probability within ``1/field`` of ``p``."""
    return np.asarray(hash_eval(h, np.asarray(keys, dtype=np.int64))) < bernoulli_threshold(p)


def monobit_pvalue(bits: np.ndarray) -> float:
    bits = np.asarray(bits, dtype=np.int64)
    n = len(bits)
    s = abs(2 * int(bits.sum()) - n) / math.sqrt(n)
    return float(math.erfc(s / math.sqrt(2)))


def byte_chi_square_pvalue(bits: np.ndarray) -> float:
    bits = np.asarray(bits, dtype=np.uint8)
    usable = len(bits) // 8 * 8
    counts = np.bincount(np.packbits(bits[:usable]), minlength=256)
    return float(stats.chisquare(counts).pvalue)
