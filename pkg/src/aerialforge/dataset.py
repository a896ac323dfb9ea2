"""Training dataset generation and the .aeds record file format.

Each record pairs a noisy LS estimate at the DMRS resource elements with
the true channel there, both stored planar float32, plus the record's
SNR and PRB size. Records are written streaming (never materialized in
memory as a whole file). Layout (little-endian, docs/formats.md):

    "AEDS" | u32 version | u64 record count | records...
    record: u32 prb_size | u32 t_dmrs | u32 f_dmrs | f32 true_snr_db
          | f32 ls[2*t*f] | f32 target[2*t*f]

Channels are drawn from a TDL-A/B/C mixture with delay spread uniform in
a configurable range; every draw is a pure function of (seed, record
index).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .chanest import PILOT_SPACING_SC, PILOTS_PER_PRB
from .tdl import TdlProfile, cir_to_cfr

MAGIC = b"AEDS"
VERSION = 1
_STREAM_DATASET = 0x44415441  # "DATA"

_PILOT_ALPHABET = np.array([1.0, 1.0j, -1.0, -1.0j], dtype=np.complex64)


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    ls_input: np.ndarray    # (2, t, f) float32
    target: np.ndarray      # (2, t, f) float32
    true_snr_db: float
    prb_size: int

    def __post_init__(self) -> None:
        f = PILOTS_PER_PRB * self.prb_size
        for name, arr in (("ls_input", self.ls_input), ("target", self.target)):
            if arr.shape[0] != 2 or arr.shape[2] != f:
                raise ValueError(f"{name} shape {arr.shape} inconsistent with "
                                 f"{self.prb_size} PRB")


def generate_dataset(
    out_path,
    count: int,
    seed: int,
    *,
    prb_sizes: Sequence[int] = (1, 4, 16),
    snr_list_db: Sequence[float] = (-5.0, 5.0, 15.0),
    t_dmrs: int = 1,
    profiles: Sequence[str] = ("tdl-a", "tdl-b", "tdl-c"),
    delay_spread_range_s: tuple[float, float] = (30e-9, 1000e-9),
    scs_hz: float = 30e3,
) -> int:
    """Write ``count`` records; returns the count written.

    Record i is deterministic in (seed, i): profile, delay spread, SNR
    and pilot sequence all derive from one per-record RNG stream. The
    PRB size cycles through ``prb_sizes`` so every size gets an equal
    share.
    """
    if count < 1:
        raise ValueError("record count must be >= 1")
    prb_sizes = [int(p) for p in prb_sizes]
    snr_list = [float(s) for s in snr_list_db]

    with open(out_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", count))
        for i in range(count):
            record = _gen_record(seed, i, prb_sizes, snr_list, t_dmrs,
                                 profiles, delay_spread_range_s, scs_hz)
            _write_record(fh, record)
    return count


def _gen_record(seed: int, index: int, prb_sizes: list[int], snr_list: list[float],
                t_dmrs: int, profiles: Sequence[str],
                ds_range: tuple[float, float], scs_hz: float) -> DatasetRecord:
    rng = np.random.default_rng([seed, _STREAM_DATASET, index])
    prb = prb_sizes[index % len(prb_sizes)]
    profile_name = profiles[int(rng.integers(0, len(profiles)))]
    delay_spread = float(rng.uniform(*ds_range))
    snr_db = snr_list[int(rng.integers(0, len(snr_list)))]

    profile = TdlProfile(profile_name, delay_spread)
    powers = profile.powers_lin
    raw = rng.standard_normal((powers.size, 2))
    gains = (raw[:, 0] + 1j * raw[:, 1]) * np.sqrt(powers / 2.0)

    n_sc = 12 * prb
    pilot_sc = np.arange(0, n_sc, PILOT_SPACING_SC)
    h = cir_to_cfr(profile.delays_s, gains, n_sc, scs_hz, pilot_sc)
    h = np.broadcast_to(h, (t_dmrs, pilot_sc.size)).astype(np.complex64)

    pilots = _PILOT_ALPHABET[rng.integers(0, 4, size=h.shape)]
    sigma2 = 10.0 ** (-snr_db / 10.0)
    raw_n = rng.standard_normal((*h.shape, 2))
    noise = np.sqrt(sigma2 / 2.0) * (raw_n[..., 0] + 1j * raw_n[..., 1])

    rx = (h.astype(np.complex128) * pilots + noise).astype(np.complex64)
    h_ls = rx / pilots

    return DatasetRecord(
        ls_input=np.stack([h_ls.real, h_ls.imag]).astype(np.float32),
        target=np.stack([h.real, h.imag]).astype(np.float32),
        true_snr_db=snr_db,
        prb_size=prb,
    )


def _write_record(fh, record: DatasetRecord) -> None:
    _, t, f = record.ls_input.shape
    fh.write(struct.pack("<IIIf", record.prb_size, t, f, record.true_snr_db))
    fh.write(np.ascontiguousarray(record.ls_input, dtype="<f4").tobytes())
    fh.write(np.ascontiguousarray(record.target, dtype="<f4").tobytes())


def read_dataset(path) -> Iterator[DatasetRecord]:
    """Stream records back from an .aeds file."""
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16 or head[:4] != MAGIC:
            raise DatasetFormatError("not an AEDS file")
        (version,) = struct.unpack_from("<I", head, 4)
        if version != VERSION:
            raise DatasetFormatError(f"unsupported dataset version {version}")
        (count,) = struct.unpack_from("<Q", head, 8)
        for _ in range(count):
            header = fh.read(16)
            if len(header) < 16:
                raise DatasetFormatError("truncated record header")
            prb, t, f, snr = struct.unpack("<IIIf", header)
            n = 2 * t * f
            payload = fh.read(8 * n)
            if len(payload) < 8 * n:
                raise DatasetFormatError("truncated record payload")
            ls = np.frombuffer(payload, dtype="<f4", count=n).reshape(2, t, f)
            target = np.frombuffer(payload, dtype="<f4", count=n, offset=4 * n).reshape(2, t, f)
            yield DatasetRecord(ls_input=ls, target=target, true_snr_db=snr, prb_size=prb)


def dataset_record_count(path) -> int:
    with open(path, "rb") as fh:
        head = fh.read(16)
    if len(head) < 16 or head[:4] != MAGIC:
        raise DatasetFormatError("not an AEDS file")
    (count,) = struct.unpack_from("<Q", head, 8)
    return count
