from __future__ import annotations

import struct

import numpy as np
import pytest

from droneqkd import rng
from droneqkd.postprocessing.hashing import PRIME, poly_hash, verify
from droneqkd.postprocessing.keyblock import BlockStatus, KeyBlock, StatusError
from droneqkd.postprocessing.keyfile import KeyFileError, key_bytes, read_key, write_key
from droneqkd.postprocessing.ldpc import (DecodeFailure, build_code, check_bits_for, decode,
                                          syndrome)
from droneqkd.postprocessing.toeplitz import (seed_bits, toeplitz_extract, toeplitz_multiply,
                                              toeplitz_naive)

SEED = bytes(range(32))


# ---------------------------------------------------------------- LDPC structure

def test_small_code_structure():
    code = build_code(SEED, 16, 8)
    assert np.all(code.column_weights == 3)
    assert set(code.row_weights.tolist()) <= {5, 6, 7}
    H = code.H.toarray()
    assert H.max() == 1  # no duplicate edges
    assert code.structure_key() == build_code(SEED, 16, 8).structure_key()


def test_large_code_is_balanced_without_four_cycles():
    code = build_code(SEED, 4096, 1024)
    assert np.all(code.column_weights == 3)
    assert code.row_weights.max() - code.row_weights.min() <= 1
    assert code.four_cycles == 0
    overlap = (code.H.T @ code.H).toarray()
    np.fill_diagonal(overlap, 0)
    assert overlap.max() <= 1


def test_different_seeds_give_different_structures():
    gen = rng.stream(1, "seed-pairs")
    for _ in range(100):
        a, b = gen.bytes(32), gen.bytes(32)
        assert build_code(a, 64, 32).structure_key() != build_code(b, 64, 32).structure_key()


def test_build_errors():
    for n, m in ((16, 16), (16, 0), (16, 20)):
        with pytest.raises(ValueError):
            build_code(SEED, n, m)
    with pytest.raises(ValueError):
        build_code(b"short", 16, 8)


def test_check_bit_budget():
    assert check_bits_for(0.023, 4096, 1.16) == 751


# ---------------------------------------------------------------- syndrome / decode

def test_syndrome_linearity_and_unit_vectors():
    code = build_code(SEED, 256, 128)
    gen = rng.stream(2, "syn")
    a, b = gen.integers(0, 2, (2, 256), dtype=np.uint8)
    assert not syndrome(code, np.zeros(256, np.uint8)).any()
    assert np.array_equal(syndrome(code, a ^ b), syndrome(code, a) ^ syndrome(code, b))
    for i in (0, 17, 255):
        e = np.zeros(256, np.uint8)
        e[i] = 1
        assert np.array_equal(syndrome(code, e), code.column(i))
    with pytest.raises(ValueError):
        syndrome(code, np.zeros(255, np.uint8))


def test_decode_zero_errors_returns_input_at_iteration_zero():
    code = build_code(SEED, 4096, 1024)
    x = rng.stream(3, "x").integers(0, 2, 4096, dtype=np.uint8)
    out, iters = decode(code, x, syndrome(code, x), 0.02)
    assert iters == 0 and np.array_equal(out, x)
    with pytest.raises(ValueError):
        decode(code, x, syndrome(code, x), 0.5)


def test_decode_corrects_light_noise():
    code = build_code(SEED, 4096, 1024)
    gen = rng.stream(4, "light")
    for _ in range(5):
        x = gen.integers(0, 2, 4096, dtype=np.uint8)
        y = x ^ (gen.random(4096) < 0.01).astype(np.uint8)
        out, iters = decode(code, y, syndrome(code, x), 0.01)
        assert iters > 0 and np.array_equal(out, x)


def _failure_rate(m, qber, blocks, seed):
    code = build_code(rng.stream(seed, "fer-code").bytes(32), 4096, m)
    gen = rng.stream(seed, "fer-blocks")
    failures = 0
    for _ in range(blocks):
        x = gen.integers(0, 2, 4096, dtype=np.uint8)
        y = x ^ (gen.random(4096) < qber).astype(np.uint8)
        try:
            out, _ = decode(code, y, syndrome(code, x), qber)
            failures += int(not np.array_equal(out, x))
        except DecodeFailure:
            failures += 1
    return failures / blocks


def test_quarter_rate_code_at_observed_qber():
    # n = 4096, m = 1024 at 2.3 % QBER: fewer than 1 % of 500 blocks may fail
    assert _failure_rate(1024, 0.023, 500, 21) < 0.01


def test_quarter_rate_code_never_claims_success_at_25_percent():
    assert _failure_rate(1024, 0.25, 100, 22) > 0.99


# ---------------------------------------------------------------- verification hash

def test_poly_hash_matches_direct_sum():
    gen = rng.stream(5, "hash")
    for n in (0, 1, 31, 32, 33, 100, 4096):
        bits = gen.integers(0, 2, n, dtype=np.uint8)
        key = gen.bytes(8)
        padded = list(bits) + [0] * ((-n) % 32)
        words = [sum(int(padded[32 * w + i]) << i for i in range(32))
                 for w in range(len(padded) // 32)]
        k = int.from_bytes(key, "little") % PRIME
        expected = (sum(w * pow(k, i + 1, PRIME) for i, w in enumerate(words))
                    + n * pow(k, len(words) + 1, PRIME)) % PRIME
        assert poly_hash(bits, key) == expected.to_bytes(8, "little")


def test_verify_detects_single_bit_differences():
    gen = rng.stream(6, "collide")
    collisions = 0
    for _ in range(10_000):
        bits = gen.integers(0, 2, 256, dtype=np.uint8)
        other = bits.copy()
        other[gen.integers(256)] ^= 1
        key = gen.bytes(8)
        collisions += verify(other, poly_hash(bits, key), key)
    assert collisions == 0


def test_verify_trivial_cases():
    key = bytes(8)
    bits = np.ones(40, np.uint8)
    assert verify(bits, poly_hash(bits, key), key)
    empty = np.zeros(0, np.uint8)
    assert verify(empty, poly_hash(empty, key), key)
    # a trailing zero changes the length term
    assert poly_hash(np.zeros(3, np.uint8), b"\x07" * 8) != poly_hash(np.zeros(4, np.uint8),
                                                                       b"\x07" * 8)
    with pytest.raises(ValueError):
        poly_hash(bits, b"123")


# ---------------------------------------------------------------- Toeplitz

def test_toeplitz_hand_example():
    s = np.array([1, 0, 1, 1, 0, 0, 1, 0, 1, 1, 1], np.uint8)
    x = np.array([1, 1, 0, 1, 0, 0, 1, 0], np.uint8)
    # rows are s[i+7], s[i+6], ..., s[i]; products worked out by hand
    assert toeplitz_multiply(s, x, 4).tolist() == [1, 0, 0, 0]
    assert toeplitz_naive(s, x, 4).tolist() == [1, 0, 0, 0]


def test_toeplitz_linearity_and_zero():
    gen = rng.stream(7, "lin")
    for _ in range(20):
        seed = gen.bytes(32)
        a, b = gen.integers(0, 2, (2, 500), dtype=np.uint8)
        ta, tb = toeplitz_extract(seed, a, 300), toeplitz_extract(seed, b, 300)
        assert np.array_equal(toeplitz_extract(seed, a ^ b, 300), ta ^ tb)
        assert not toeplitz_extract(seed, np.zeros(500, np.uint8), 300).any()


def test_toeplitz_extract_uses_named_seed_stream():
    bits = rng.stream(8, "x").integers(0, 2, 100, dtype=np.uint8)
    expected = toeplitz_naive(seed_bits(SEED, 100, 40), bits, 40)
    assert np.array_equal(toeplitz_extract(SEED, bits, 40), expected)
    with pytest.raises(ValueError):
        toeplitz_extract(SEED, bits, 101)
    with pytest.raises(ValueError):
        seed_bits(b"short", 10, 5)


# ---------------------------------------------------------------- key blocks and files

def test_key_block_status_only_moves_forward():
    b = KeyBlock(0, np.zeros(8, np.uint8))
    b.disclose(751)
    b.advance(BlockStatus.CORRECTED, np.ones(8))
    b.disclose(64)
    b.advance(BlockStatus.VERIFIED)
    with pytest.raises(StatusError):
        b.advance(BlockStatus.CORRECTED)
    b.advance(BlockStatus.AMPLIFIED, np.ones(4))
    assert b.leak_bits_accounted == 815 and b.bits.size == 4
    b.discard("test")
    with pytest.raises(StatusError):
        b.advance(BlockStatus.AMPLIFIED)
    with pytest.raises(StatusError):
        b.discard("again")


def test_key_file_round_trip(tmp_path):
    bits = rng.stream(9, "key").integers(0, 2, 1003, dtype=np.uint8)
    path = write_key(tmp_path / "k.qkdk", bits)
    raw = path.read_bytes()
    assert raw[:4] == b"QKDK" and struct.unpack_from("<I", raw, 4)[0] == 1003
    assert len(raw) == 8 + 126
    assert np.array_equal(read_key(path), bits)
    assert key_bytes(np.zeros(0, np.uint8)) == b"QKDK\0\0\0\0"
    (tmp_path / "bad").write_bytes(b"XXXX\0\0\0\0")
    with pytest.raises(KeyFileError):
        read_key(tmp_path / "bad")
    (tmp_path / "short").write_bytes(raw[:-1])
    with pytest.raises(KeyFileError):
        read_key(tmp_path / "short")
