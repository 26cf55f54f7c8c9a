import numpy as np
import pytest

from src.crypto.randomness import SeededRandomSource
from src.entropy.bell_sim import Trial, TrialBatch
from src.entropy.extractor import (
    ExtractorConfig,
    ToeplitzSeed,
    bits_to_bytes,
    bytes_to_bits,
    extract,
    monobit_test,
    pack_raw,
    runs_test,
)
from src.errors import ExtractorError


def random_instance(gen, n, m):
    cfg = ExtractorConfig(n, m, n)
    seed = ToeplitzSeed(gen.integers(0, 2, cfg.seed_len))
    raw = gen.integers(0, 2, n).astype(np.uint8)
    return cfg, seed, raw


@pytest.mark.parametrize("n,m", [(4, 1), (8, 8), (50, 7), (300, 64), (1000, 512)])
def test_fft_matches_matrix(n, m):
    gen = np.random.default_rng(n)
    for _ in range(10):
        cfg, seed, raw = random_instance(gen, n, m)
        assert np.array_equal(extract(raw, seed, cfg), extract(raw, seed, cfg, "naive"))


@pytest.mark.parametrize("block", [1, 3, 7, 64])
def test_blocked_matches_matrix(block):
    gen = np.random.default_rng(block)
    cfg, seed, raw = random_instance(gen, 200, 16)
    assert np.array_equal(extract(raw, seed, cfg, block=block), extract(raw, seed, cfg, "naive"))


def test_exhaustive_small():
    gen = np.random.default_rng(0)
    cfg = ExtractorConfig(6, 3, 6)
    seed = ToeplitzSeed(gen.integers(0, 2, cfg.seed_len))
    for value in range(2**6):
        raw = np.array([(value >> j) & 1 for j in range(6)], dtype=np.uint8)
        assert np.array_equal(extract(raw, seed, cfg), extract(raw, seed, cfg, "naive"))


def test_linearity():
    gen = np.random.default_rng(1)
    cfg, seed, a = random_instance(gen, 128, 32)
    b = gen.integers(0, 2, 128).astype(np.uint8)
    assert np.array_equal(extract(a ^ b, seed, cfg), extract(a, seed, cfg) ^ extract(b, seed, cfg))
    assert not extract(np.zeros(128, dtype=np.uint8), seed, cfg).any()


def test_matrix_layout():
    cfg = ExtractorConfig(3, 2, 3)
    seed = ToeplitzSeed([1, 0, 0, 1])
    # first column s[2:4], first row s[2], s[1], s[0]
    assert np.array_equal(seed.matrix(cfg), [[0, 0, 1], [1, 0, 0]])
    assert np.array_equal(extract(np.array([0, 0, 1]), seed, cfg), [1, 0])


@pytest.mark.parametrize("n,m,k", [(10, 0, 5), (10, 6, 5), (10, 5, 11)])
def test_invalid_shape(n, m, k):
    with pytest.raises(ExtractorError):
        ExtractorConfig(n, m, k)


def test_length_checks():
    cfg = ExtractorConfig(10, 4, 10)
    seed = ToeplitzSeed(np.zeros(cfg.seed_len))
    with pytest.raises(ExtractorError):
        extract(np.zeros(9, dtype=np.uint8), seed, cfg)
    with pytest.raises(ExtractorError):
        extract(np.zeros(10, dtype=np.uint8), ToeplitzSeed(np.zeros(5)), cfg)
    with pytest.raises(ValueError):
        extract(np.zeros(10, dtype=np.uint8), seed, cfg, "magic")


def test_seed_prefix(tmp_path):
    seed = ToeplitzSeed.generate(101, SeededRandomSource("seed"))
    seed.save(tmp_path / "seed.bin")
    loaded = ToeplitzSeed.load(tmp_path / "seed.bin", 101)
    assert np.array_equal(loaded.bits, seed.bits)
    cfg = ExtractorConfig(50, 8, 50)
    assert np.array_equal(seed.for_config(cfg).bits, seed.bits[:57])
    with pytest.raises(ExtractorError):
        seed.for_config(ExtractorConfig(100, 8, 100))
    with pytest.raises(ExtractorError):
        ToeplitzSeed([0, 2])


def test_pack_raw_order():
    trials = [Trial(0, 0, 1, 0, 1), Trial(1, 1, 0, 1, 2)]
    expected = [1, 0, 0, 1]
    assert list(pack_raw(trials)) == expected
    assert list(pack_raw(TrialBatch.from_trials(trials))) == expected
    with pytest.raises(ExtractorError):
        pack_raw([])


def test_bit_packing():
    bits = np.array([1, 0, 0, 0, 0, 0, 0, 0, 1, 1], dtype=np.uint8)
    data = bits_to_bytes(bits)
    assert data == bytes([1, 3])
    assert np.array_equal(bytes_to_bits(data, 10), bits)
    with pytest.raises(ExtractorError):
        bytes_to_bits(data, 17)


def test_bit_tests():
    alternating = np.tile([0, 1], 500)
    assert monobit_test(alternating) == pytest.approx(1.0)
    assert runs_test(alternating) < 1e-6
    assert runs_test(np.zeros(1000)) == 0.0
    bits = np.random.default_rng(2).integers(0, 2, 10_000)
    assert monobit_test(bits) > 1e-4
    assert runs_test(bits) > 1e-4


@pytest.mark.slow
def test_blocked_extraction_beyond_one_fft():
    gen = np.random.default_rng(3)
    n = (1 << 24) + 1000
    cfg = ExtractorConfig(n, 64, n)
    seed = ToeplitzSeed(gen.integers(0, 2, cfg.seed_len).astype(np.uint8))
    raw = gen.integers(0, 2, n).astype(np.uint8)
    out = extract(raw, seed, cfg)
    # the last row of the matrix is s[m-1+n-1-j] for column j
    row = seed.bits[cfg.m - 1 : cfg.m - 1 + n][::-1].astype(np.int64)
    assert out[-1] == int(row @ raw.astype(np.int64)) & 1
