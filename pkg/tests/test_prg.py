import math
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphsketch.prg import (
    MERSENNE,
    SEED_BITS,
    ExtractorSpec,
    HashFamily,
    IndexOutOfRange,
    LengthMismatch,
    PrgChain,
    bernoulli,
    bernoulli_threshold,
    byte_chi_square_pvalue,
    extract,
    extract_bit,
    hash_eval,
    mod_mersenne,
    monobit_pvalue,
    parse_seed,
    poly_eval,
    prg_bit,
)


def uniform_bits(rng, n):
    return rng.integers(0, 2, n).astype(np.uint8)


def test_parse_seed_accepts_hex_forms():
    assert parse_seed("0xff") == b"\xff"
    assert parse_seed("abc") == b"\x0a\xbc"
    assert parse_seed(255) == b"\xff"
    assert parse_seed(b"raw") == b"raw"


@given(st.integers(0, (1 << 62) - 1))
def test_mersenne_fold_matches_modulo(x):
    assert int(mod_mersenne(np.array([x], dtype=np.int64))[0]) == x % MERSENNE


def test_extract_is_deterministic():
    rng = np.random.default_rng(0)
    spec = ExtractorSpec(4096, 1024)
    x, y = uniform_bits(rng, 4096), uniform_bits(rng, SEED_BITS)
    assert np.array_equal(extract(x, y, spec), extract(x, y, spec))


def test_extract_length_checks():
    spec = ExtractorSpec(64, 32)
    with pytest.raises(LengthMismatch):
        extract(np.zeros(32, np.uint8), np.zeros(SEED_BITS, np.uint8), spec)
    with pytest.raises(ValueError):
        ExtractorSpec(64, 128)
    with pytest.raises(IndexOutOfRange):
        extract_bit(np.zeros(64, np.uint8), np.zeros(SEED_BITS, np.uint8), spec, 32)


def test_single_bit_path_matches_full_output():
    rng = np.random.default_rng(1)
    spec = ExtractorSpec(2048, 2048)
    for _ in range(100):
        x, y = uniform_bits(rng, 2048), uniform_bits(rng, SEED_BITS)
        j = int(rng.integers(0, 2048))
        touched: list = []
        assert extract_bit(x, y, spec, j, touched) == extract(x, y, spec)[j]
        assert len(touched) <= spec.locality


def test_extract_monobit_within_three_sigma():
    rng = np.random.default_rng(2)
    n = 1 << 20
    out = extract(uniform_bits(rng, n), uniform_bits(rng, SEED_BITS), ExtractorSpec(n, 10**6))
    assert abs(int(out.sum()) - len(out) / 2) <= 3 * math.sqrt(len(out)) / 2


def test_prg_bit_deterministic_across_processes():
    code = ("from graphsketch.prg import PrgChain, prg_bit; c = PrgChain.create('c0ffee'); "
            "print(''.join(str(prg_bit(c, i)) for i in range(0, 200000, 997)))")
    runs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    chain = PrgChain.create("c0ffee")
    here = "".join(str(prg_bit(chain, i)) for i in range(0, 200000, 997))
    assert runs[0] == runs[1] == here + "\n"


def test_sequential_expansion_equals_random_access():
    chain = PrgChain.create(b"seq")
    full = chain.bits(0, 1 << 12)
    fresh = PrgChain.create(b"seq")
    assert [prg_bit(fresh, i) for i in range(1 << 12)] == full.tolist()


def test_prg_bit_bounds():
    chain = PrgChain.create(b"x", space=1 << 6, exponent=1.5)
    with pytest.raises(IndexOutOfRange):
        prg_bit(chain, chain.length)
    with pytest.raises(IndexOutOfRange):
        prg_bit(chain, -1)


def test_statistical_battery():
    bits = PrgChain.create(b"battery").bits(0, 10**6)
    assert monobit_pvalue(bits) > 1e-3
    assert byte_chi_square_pvalue(bits) > 1e-3


def test_only_top_level_reads_the_seed():
    chain = PrgChain.create(b"levels", space=1 << 8)
    assert chain.levels[-1].tape_bits == chain.true_seed_bits
    for lo, hi in zip(chain.levels, chain.levels[1:]):
        # every level's tape fits in the output of the level above
        assert lo.tape_bits <= hi.output_bits
        assert hi.space == 9 * lo.space


def test_block_structure_equals_extractor_calls():
    chain = PrgChain.create(b"blocks", space=1 << 8)
    lv = chain.levels[0]
    x = chain.tape(0, np.arange(lv.n_bits))
    for block in (0, 1, lv.blocks // 2, lv.blocks - 1):
        y = chain.tape(0, lv.n_bits + block * SEED_BITS + np.arange(SEED_BITS))
        got = chain.output(0, block * lv.block_bits + np.arange(lv.block_bits))
        assert np.array_equal(got, extract(x, y, lv.spec))


def test_collapsed_chain_matches():
    chain = PrgChain.create(b"collapse", space=1 << 8)
    lv = chain.levels[0]
    # a one-level generator fed the level-1 output directly as its seed
    single = PrgChain(chain.seed, chain.space, chain.exponent, [lv])
    single._top = chain.output(1, np.arange(lv.tape_bits))
    assert np.array_equal(single.bits(0, 5000), chain.bits(0, 5000))


def test_locality_counter():
    chain = PrgChain.create(b"loc", space=1 << 10)
    budget = math.log2(chain.space) ** 3
    rng = np.random.default_rng(3)
    for i in rng.integers(0, chain.length, 500):
        counter: dict = {}
        prg_bit(chain, int(i), counter)
        assert 0 < counter["touched"] <= budget


def test_linear_polynomial_at_zero_is_constant():
    h = HashFamily((12345, 678))
    assert hash_eval(h, 0) == 12345
    assert h.kind == "pairwise" and HashFamily((1, 2, 3, 4)).kind == "4-wise"


def test_hash_rejects_out_of_field_keys():
    with pytest.raises(ValueError):
        hash_eval(HashFamily((1, 2)), [MERSENNE])


def _random_families(rng, count, k):
    return rng.integers(0, MERSENNE, size=(k, count), dtype=np.int64)


def test_pairwise_joint_probability():
    rng = np.random.default_rng(4)
    trials, p = 10**5, 0.3
    coefs = _random_families(rng, trials, 2)
    thr = bernoulli_threshold(p)
    a = poly_eval(coefs, np.int64(17)) < thr
    b = poly_eval(coefs, np.int64(40_000)) < thr
    both = np.mean(a & b)
    sigma = math.sqrt(p * p * (1 - p * p) / trials)
    assert abs(both - p * p) <= 4 * sigma
    assert abs(a.mean() - p) <= 4 * math.sqrt(p * (1 - p) / trials)


def test_four_wise_fourth_moment():
    rng = np.random.default_rng(5)
    trials = 10**5
    coefs = _random_families(rng, trials, 4)
    keys = np.array([3, 11, 500, 90_001], dtype=np.int64)
    signs = 1 - 2 * (poly_eval(coefs[:, :, None], keys[None, :]) & 1)
    prod = signs.prod(axis=1)
    assert abs(prod.mean()) <= 4 / math.sqrt(trials)


def test_bernoulli_marginal():
    h = HashFamily.from_seed(b"s", "bern", 2)
    keys = np.arange(200_000)
    rate = bernoulli(h, keys, 0.1).mean()
    assert abs(rate - 0.1) <= 4 * math.sqrt(0.09 / len(keys))
    assert abs(bernoulli_threshold(0.1) / MERSENNE - 0.1) <= 1 / MERSENNE


@settings(max_examples=10, deadline=None)
@given(st.binary(min_size=1, max_size=8))
def test_from_seed_families_are_reproducible(seed):
    assert HashFamily.from_seed(seed, "a", 4) == HashFamily.from_seed(seed, "a", 4)
    assert HashFamily.from_seed(seed, "a", 4) != HashFamily.from_seed(seed, "b", 4)
