"""QAM mapping, energy normalization, and hard-decision demapping."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialforge.modem import LengthError, demodulate, modulate


class TestMapping:
    def test_qpsk_anchor_points(self):
        # Documented mapping: bits (b0, b1) -> [(1-2b0) + j(1-2b1)]/sqrt(2).
        s = modulate(np.array([0, 0]), 4)
        assert s[0] == pytest.approx((1 + 1j) / math.sqrt(2))
        s = modulate(np.array([1, 0]), 4)
        assert s[0] == pytest.approx((-1 + 1j) / math.sqrt(2))
        s = modulate(np.array([0, 1]), 4)
        assert s[0] == pytest.approx((1 - 1j) / math.sqrt(2))

    def test_16qam_anchor(self):
        # bits 0000 -> (1 + 1j)/sqrt(10); bits 0010 -> (3 + 1j)/sqrt(10).
        assert modulate(np.array([0, 0, 0, 0]), 16)[0] == pytest.approx(
            (1 + 1j) / math.sqrt(10))
        assert modulate(np.array([0, 0, 1, 0]), 16)[0] == pytest.approx(
            (3 + 1j) / math.sqrt(10))

    def test_constellation_energy_exact(self):
        # Mean energy over the full constellation is exactly 1.
        for order in (4, 16, 64):
            m = int(math.log2(order))
            bits = np.array([[int(b) for b in format(v, f"0{m}b")]
                             for v in range(order)]).reshape(-1)
            symbols = modulate(bits, order)
            assert np.mean(np.abs(symbols) ** 2) == pytest.approx(1.0, abs=1e-12)

    def test_gray_property_neighbors_differ_one_bit(self):
        # Nearest horizontal/vertical constellation neighbors differ in
        # exactly one bit for every order.
        for order in (4, 16, 64):
            m = int(math.log2(order))
            bits = np.array([[int(b) for b in format(v, f"0{m}b")]
                             for v in range(order)])
            symbols = modulate(bits.reshape(-1), order)
            spacing = 2.0 / math.sqrt({4: 2, 16: 10, 64: 42}[order])
            for i in range(order):
                for k in range(order):
                    d = symbols[i] - symbols[k]
                    if i != k and abs(d) <= spacing * 1.001:
                        assert np.sum(bits[i] != bits[k]) == 1


class TestRoundtrip:
    @pytest.mark.parametrize("order", [4, 16, 64])
    def test_noiseless_roundtrip(self, order):
        rng = np.random.default_rng(order)
        bits = rng.integers(0, 2, size=9996, dtype=np.uint8)
        assert np.array_equal(demodulate(modulate(bits, order), order), bits)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from([4, 16, 64]), st.integers(1, 64))
    def test_roundtrip_property(self, seed, order, n_symbols):
        rng = np.random.default_rng(seed)
        m = int(math.log2(order))
        bits = rng.integers(0, 2, size=n_symbols * m, dtype=np.uint8)
        assert np.array_equal(demodulate(modulate(bits, order), order), bits)

    def test_demod_clips_out_of_range(self):
        # Samples far outside the grid decide for the outermost level.
        bits = demodulate(np.array([100.0 + 100.0j]), 16)
        want = demodulate(modulate(np.array([0, 0, 1, 0, 0, 1][:4]), 16) * 1.0, 16)
        assert bits.shape == want.shape


class TestErrors:
    def test_length_error(self):
        with pytest.raises(LengthError):
            modulate(np.array([0, 1, 0]), 4)

    def test_unsupported_order(self):
        with pytest.raises(ValueError, match="unsupported QAM order"):
            modulate(np.zeros(3, dtype=np.uint8), 8)
        with pytest.raises(ValueError, match="unsupported QAM order"):
            demodulate(np.zeros(3, dtype=np.complex128), 8)
