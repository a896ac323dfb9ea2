"""Gray-mapped square QAM with unit average energy.

Bit-to-symbol mapping follows the usual cellular convention: per symbol,
even-positioned bits drive the in-phase axis and odd-positioned bits the
quadrature axis, each axis Gray-coded, scaled to unit mean energy:

    QPSK    x = [(1-2 b0) + j (1-2 b1)] / sqrt(2)
    16-QAM  x = [(1-2 b0)(2-(1-2 b2)) + j (1-2 b1)(2-(1-2 b3))] / sqrt(10)
    64-QAM  x = [(1-2 b0)(4-(1-2 b2)(2-(1-2 b4))) + j (...odd bits...)] / sqrt(42)

Demodulation is hard-decision nearest-neighbor, done exactly per axis.
"""

from __future__ import annotations

import math

import numpy as np

QAM_ORDERS = (4, 16, 64)
_SCALE = {4: math.sqrt(2.0), 16: math.sqrt(10.0), 64: math.sqrt(42.0)}


class LengthError(ValueError):
    """Bit count is not a multiple of bits-per-symbol."""


def _axis_levels(bits_per_axis: int) -> tuple[np.ndarray, np.ndarray]:
    """(levels for each axis bit pattern, bit patterns for each sorted level)."""
    n = 1 << bits_per_axis
    levels = np.empty(n, dtype=np.float64)
    for pattern in range(n):
        b = [(pattern >> (bits_per_axis - 1 - i)) & 1 for i in range(bits_per_axis)]
        if bits_per_axis == 1:
            amp = 1.0
        elif bits_per_axis == 2:
            amp = 2.0 - (1.0 - 2.0 * b[1])
        else:
            amp = 4.0 - (1.0 - 2.0 * b[1]) * (2.0 - (1.0 - 2.0 * b[2]))
        levels[pattern] = (1.0 - 2.0 * b[0]) * amp
    # Inverse table: sorted level index -> bit pattern.
    patterns_by_rank = np.argsort(levels)
    return levels, patterns_by_rank


_AXIS_TABLES = {m: _axis_levels(m) for m in (1, 2, 3)}


def modulate(bits: np.ndarray, order: int) -> np.ndarray:
    """Map a bit array (0/1) to unit-energy QAM symbols."""
    if order not in QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order} (supported: {QAM_ORDERS})")
    bits = np.asarray(bits, dtype=np.int64).reshape(-1)
    m = int(math.log2(order))
    if bits.size % m:
        raise LengthError(f"{bits.size} bits is not a multiple of {m}")
    groups = bits.reshape(-1, m)
    half = m // 2
    levels, _ = _AXIS_TABLES[half]

    weights = 1 << np.arange(half - 1, -1, -1)
    i_pattern = groups[:, 0::2] @ weights
    q_pattern = groups[:, 1::2] @ weights
    return (levels[i_pattern] + 1j * levels[q_pattern]) / _SCALE[order]


def demodulate(symbols: np.ndarray, order: int) -> np.ndarray:
    """Hard-decision nearest-neighbor demapping back to bits."""
    if order not in QAM_ORDERS:
        raise ValueError(f"unsupported QAM order {order} (supported: {QAM_ORDERS})")
    symbols = np.asarray(symbols).reshape(-1)
    m = int(math.log2(order))
    half = m // 2
    _, patterns_by_rank = _AXIS_TABLES[half]
    n_levels = 1 << half
    scaled = symbols * _SCALE[order]

    def axis_bits(values: np.ndarray) -> np.ndarray:
        # Levels are -(L-1), ..., -1, +1, ..., (L-1) in steps of 2.
        rank = np.clip(np.round((values + (n_levels - 1.0)) / 2.0), 0, n_levels - 1)
        patterns = patterns_by_rank[rank.astype(np.int64)]
        out = np.empty((values.size, half), dtype=np.uint8)
        for i in range(half):
            out[:, i] = (patterns >> (half - 1 - i)) & 1
        return out

    i_bits = axis_bits(scaled.real)
    q_bits = axis_bits(scaled.imag)
    interleaved = np.empty((symbols.size, m), dtype=np.uint8)
    interleaved[:, 0::2] = i_bits
    interleaved[:, 1::2] = q_bits
    return interleaved.reshape(-1)
