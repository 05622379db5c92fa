import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ggopt import coding, ggdist
from ggopt.coding import QuantSpec


def ref_codeword(v: int, k: int) -> str:
    """Bit-serial k-th order Exp-Golomb codeword, built from the binary string of v + 2^k."""
    b = bin(v + (1 << k))[2:]
    return "0" * (len(b) - 1 - k) + b


def blob_bits(blob) -> str:
    return "".join(f"{byte:08b}" for byte in blob.payload)[: blob.bit_length]


class TestQuantize:
    @pytest.mark.parametrize("x, expected", [([0.6], [2]), ([-0.6], [-3]), ([0.25, -0.25, 0], [1, -1, 0])])
    def test_floor(self, x, expected):
        assert coding.quantize(x, QuantSpec(2)).values.tolist() == expected

    def test_dequantize_bound(self):
        x = np.random.default_rng(0).normal(size=1000)
        spec = QuantSpec(5)
        err = x - coding.quantize(x, spec).dequantize()
        assert np.all((err >= 0) & (err < spec.step))

    def test_overflow(self):
        with pytest.raises(coding.QuantOverflowError):
            coding.quantize([2.0**40], QuantSpec(0))

    def test_non_finite(self):
        with pytest.raises(ValueError):
            coding.quantize([np.nan], QuantSpec(2))

    @pytest.mark.parametrize("n, k", [(-1, 0), (25, 0), (8, 16), (8, -1)])
    def test_spec_bounds(self, n, k):
        with pytest.raises(ValueError):
            QuantSpec(n, k)


class TestZigzag:
    def test_cases(self):
        assert coding.zigzag_map(0) == 0
        assert coding.zigzag_map(3) == 5
        assert coding.zigzag_map(-3) == 6

    def test_inverse(self):
        q = np.arange(-1000, 1001)
        assert np.array_equal(coding.zigzag_unmap(coding.zigzag_map(q)), q)
        assert sorted(coding.zigzag_map(q).tolist()) == list(range(2001))

    def test_unmap_negative(self):
        with pytest.raises(ValueError):
            coding.zigzag_unmap(-1)


class TestCodeLength:
    @pytest.mark.parametrize("v, k, expected", [(0, 0, 1), (5, 0, 5), (7, 2, 5)])
    def test_examples(self, v, k, expected):
        assert coding.eg_code_length(v, k) == expected
        assert len(ref_codeword(v, k)) == expected

    def test_reference_codewords(self):
        assert ref_codeword(5, 0) == "00110"
        assert ref_codeword(7, 2) == "01011"

    @pytest.mark.parametrize("k", range(8))
    def test_matches_reference_and_monotone(self, k):
        v = np.arange(5000)
        lengths = coding.eg_code_length(v, k)
        assert lengths.tolist() == [len(ref_codeword(int(i), k)) for i in v]
        assert np.all(np.diff(lengths) >= 0)

    def test_powers_of_two_boundaries(self):
        # floor(log2) via frexp must be exact right below and at 2^j
        for j in range(1, 33):
            for m in (2**j - 1, 2**j):
                assert coding.eg_code_length(m - 1, 0) == 2 * (m.bit_length() - 1) + 1


class TestEncodeDecode:
    def test_small_stream(self):
        blob = coding.eg_encode([0, 1, 2], 0)
        assert blob_bits(blob) == "1" + "010" + "011"
        assert blob.bit_length == 7

    def test_empty(self):
        blob = coding.eg_encode([], 3)
        assert blob.payload == b"" and blob.bit_length == 0
        assert coding.eg_decode(blob).size == 0

    def test_order_one(self):
        blob = coding.eg_encode([9], 1)
        assert blob_bits(blob) == "001011"
        assert blob.bit_length == 6

    @pytest.mark.parametrize("k", range(8))
    def test_round_trip_0_255(self, k):
        v = np.arange(256)
        blob = coding.eg_encode(v, k)
        assert np.array_equal(coding.eg_decode(blob), v)
        assert blob_bits(blob) == "".join(ref_codeword(int(i), k) for i in v)
        assert len(blob.payload) == math.ceil(blob.bit_length / 8)

    def test_single_one_bit(self):
        blob = coding.EncodedBlob(0, 1, 0, 0, (1,), b"\x80", 1)
        assert coding.eg_decode(blob).tolist() == [0]

    def test_truncated(self):
        blob = coding.eg_encode([3, 9, 1000], 0)
        bad = coding.EncodedBlob(0, 3, 0, 0, (3,), blob.payload[: math.ceil((blob.bit_length - 1) / 8)],
                                 blob.bit_length - 1)
        with pytest.raises(coding.CorruptStreamError):
            coding.eg_decode(bad)

    def test_count_mismatch(self):
        blob = coding.eg_encode([3, 9], 0)
        with pytest.raises(coding.CorruptStreamError):
            coding.eg_decode(coding.EncodedBlob(0, 3, 0, 0, (3,), blob.payload, blob.bit_length))
        with pytest.raises(coding.CorruptStreamError):
            coding.eg_decode(coding.EncodedBlob(0, 1, 0, 0, (1,), blob.payload, blob.bit_length))

    def test_shape_preserved(self):
        v = np.arange(24).reshape(2, 3, 4)
        blob = coding.eg_encode(v, 2)
        assert blob.dims == (2, 3, 4)
        assert np.array_equal(coding.eg_decode(blob), v)

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            coding.eg_encode([-1], 0)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.integers(0, 2**31), max_size=300), st.integers(0, 15))
    def test_length_agreement_and_round_trip(self, values, k):
        blob = coding.eg_encode(values, k)
        assert blob.bit_length == int(np.sum(coding.eg_code_length(np.asarray(values, dtype=np.int64), k)))
        assert coding.eg_decode(blob).tolist() == values

    def test_length_agreement_bulk(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            k = int(rng.integers(0, 8))
            v = rng.geometric(0.01, size=5000) - 1
            blob = coding.eg_encode(v, k)
            assert blob.bit_length == coding.eg_code_length(v, k).sum()

    @pytest.mark.parametrize("k", range(8))
    def test_prefix_free(self, k):
        # in lexicographic order any prefix relation shows up between neighbours
        words = sorted(ref_codeword(v, k) for v in range(4096))
        assert not any(b.startswith(a) for a, b in zip(words, words[1:]))
        words = sorted(blob_bits(coding.eg_encode([v], k)) for v in range(4096))
        assert not any(b.startswith(a) for a, b in zip(words, words[1:]))


class TestBlobBytes:
    def test_layout(self):
        blob = coding.eg_encode(np.arange(6).reshape(2, 3), 1, tensor_id=7, n=4)
        buf = blob.to_bytes()
        assert buf[:4] == b"EGB1"
        assert int.from_bytes(buf[4:8], "little") == 7
        assert int.from_bytes(buf[8:12], "little") == 6
        assert buf[12] == 4 and buf[13] == 1 and buf[14] == 2
        assert int.from_bytes(buf[15:19], "little") == 2
        assert int.from_bytes(buf[19:23], "little") == 3
        assert int.from_bytes(buf[23:31], "little") == blob.bit_length
        assert buf[31:] == blob.payload

    def test_round_trip(self):
        blob = coding.eg_encode(np.arange(100), 3, tensor_id=2, n=8)
        back = coding.EncodedBlob.from_bytes(blob.to_bytes())
        assert back == blob
        assert np.array_equal(coding.eg_decode(back), np.arange(100))

    def test_bad_magic(self):
        with pytest.raises(coding.CorruptStreamError):
            coding.EncodedBlob.from_bytes(b"XXXX" + bytes(20))

    def test_payload_size_checked(self):
        with pytest.raises(coding.CorruptStreamError):
            coding.EncodedBlob(0, 1, 0, 0, (1,), b"\x80\x00", 1)


class TestRate:
    def test_examples(self):
        assert coding.rate([0.5], QuantSpec(2, 0)) == 5.0
        assert coding.rate([0, 0, 0, 0], QuantSpec(5, 0)) == 1.0
        # levels [1, -2] -> mapped [1, 4]; k=1 lengths 2 and 4
        assert coding.rate([0.25, -0.5], QuantSpec(2, 1)) == 3.0

    def test_empty(self):
        with pytest.raises(ValueError):
            coding.rate([], QuantSpec())

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=200), st.integers(0, 10), st.integers(0, 6))
    def test_matches_encoded_length(self, xs, n, k):
        spec = QuantSpec(n, k)
        blob = coding.eg_encode(coding.zigzag_map(coding.quantize(xs, spec).values), k)
        assert coding.rate(xs, spec) == pytest.approx(blob.bit_length / len(xs), rel=1e-15)


class TestRateGrad:
    def test_example(self):
        g = coding.rate_grad([0.5], QuantSpec(2, 0), 1e-8)
        assert g[0] == pytest.approx(3.847186775703902, rel=1e-8)

    def test_zero(self):
        assert coding.rate_grad([0.0], QuantSpec(3)).tolist() == [0.0]
        assert coding.rate_grad([0.1], QuantSpec(2)).tolist() == [0.0]

    def test_odd(self):
        spec = QuantSpec(2)
        assert coding.rate_grad([-0.5], spec)[0] == -coding.rate_grad([0.5], spec)[0]

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.integers(1, 12))
    def test_odd_property(self, xs, n):
        spec = QuantSpec(n)
        x = np.asarray(xs)
        assert np.array_equal(coding.rate_grad(-x, spec), -coding.rate_grad(x, spec))

    def test_n_zero(self):
        with pytest.raises(ValueError):
            coding.rate_grad([1.0], QuantSpec(0))

    def test_tracks_code_length_slope(self):
        # for x > 0 the surrogate is n times smaller than d/dx of 2 log2(2^(n+1) x)
        spec = QuantSpec(8)
        x = np.array([0.3, 1.7, 9.0])
        mapped = coding.zigzag_map(coding.quantize(x, spec).values)
        slope = 2.0 * 2 * 2**spec.n / (mapped * math.log(2))
        np.testing.assert_allclose(coding.rate_grad(x, spec) * spec.n, slope, rtol=1e-9)


class TestHuffman:
    def test_single_symbol(self):
        assert coding.huffman_avg_length([5, 5, 5, 5]) == 1.0

    def test_dyadic_equals_entropy(self):
        v = [0, 0, 0, 0, 1, 1, 2, 3]
        assert coding.huffman_avg_length(v) == pytest.approx(coding.empirical_entropy(v)) == 1.75

    def test_hand_tree(self):
        # counts 3,2,2,1: {3}+{2} -> 3, then {1}+{3,2} -> 5, then with {0}
        assert coding.huffman_code_lengths([0, 0, 0, 1, 1, 2, 2, 3]) == {0: 1, 1: 2, 2: 3, 3: 3}
        assert coding.huffman_avg_length([0, 0, 0, 1, 1, 2, 2, 3]) == 2.0

    def test_uniform(self):
        assert coding.huffman_avg_length(np.repeat(np.arange(8), 3)) == 3.0

    def test_deterministic_ties(self):
        a = coding.huffman_code_lengths([1, 2, 3])
        assert a == {1: 1, 2: 2, 3: 2}
        assert coding.huffman_code_lengths([7, 5, 9, 8]) == {5: 2, 7: 2, 8: 2, 9: 2}

    @pytest.mark.parametrize("nu", [0.5, 1.0, 2.0])
    def test_bound_on_gg_samples(self, nu):
        x = ggdist.sample(ggdist.GGParams.from_sigma(0.05, nu), 20000, np.random.default_rng(3))
        q = coding.quantize(x, QuantSpec(8)).values
        H = coding.empirical_entropy(q)
        L = coding.huffman_avg_length(q)
        assert H <= L < H + 1

    def test_kraft_equality(self):
        q = np.random.default_rng(0).integers(0, 37, 500)
        lengths = coding.huffman_code_lengths(q)
        assert sum(2.0 ** -l for l in lengths.values()) == pytest.approx(1.0)


class TestFixedLength:
    @pytest.mark.parametrize("levels, bits", [([128], 8), ([0, 0, 0], 1), ([-128], 9), ([-127, 3], 8)])
    def test_mapped_max(self, levels, bits):
        # mapped: 128 -> 255, -128 -> 256, -127 -> 254
        assert coding.fl_bits(levels) == bits
