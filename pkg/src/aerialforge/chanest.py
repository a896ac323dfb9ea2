"""Pluggable PUSCH channel estimators: LS, MMSE (Wiener), and the CNN family.

All three estimators share one contract: DMRS-grid observations in,
denoised estimates at the DMRS resource elements plus a noise-variance
estimate out. A shared interpolation stage then maps any of them to the
full resource grid, so swapping estimators never changes downstream
specs.

The CNN path adds SNR-based model selection over a bank of engines
indexed by (SNR bucket, PRB size) and a stitching scheme that covers
arbitrary allocations by concatenating fixed-size block models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.linalg
import yaml

from . import engine as eng
from .tdl import TdlProfile
from .tensors import SpecMismatch, TensorValue, pack_complex_to_planar, unpack_planar_to_complex

SNR_BUCKETS_DB = tuple(range(-10, 45, 5))
PRB_MODEL_SIZES = (1, 4, 16, 64, 272)
PILOTS_PER_PRB = 6          # comb-2 DMRS: every other subcarrier
PILOT_SPACING_SC = 2
NOISE_VAR_FLOOR = 1e-12


class UnsupportedPrbSize(ValueError):
    pass


class FactorizationFailure(RuntimeError):
    """Covariance stayed non-positive-definite after the regularization ladder."""


class BankError(ValueError):
    """Model bank directory or manifest is invalid."""


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DmrsObservation:
    """Received and transmitted pilots on the DMRS resource elements."""

    rx_pilots: np.ndarray        # (t_dmrs, f_dmrs) complex64
    pilot_symbols: np.ndarray    # (t_dmrs, f_dmrs) complex64, unit modulus
    prb_count: int
    symbol_indices: tuple[int, ...]
    subcarrier_indices: np.ndarray

    def __post_init__(self) -> None:
        rx = np.ascontiguousarray(self.rx_pilots, dtype=np.complex64)
        pilots = np.ascontiguousarray(self.pilot_symbols, dtype=np.complex64)
        if rx.shape != pilots.shape:
            raise ValueError(f"rx {rx.shape} and pilot {pilots.shape} shapes differ")
        if rx.ndim != 2:
            raise ValueError("pilot grids are (symbols, subcarriers)")
        if rx.shape[1] != PILOTS_PER_PRB * self.prb_count:
            raise ValueError(
                f"{rx.shape[1]} pilot subcarriers != {PILOTS_PER_PRB} x {self.prb_count} PRB"
            )
        if not np.allclose(np.abs(pilots), 1.0, atol=1e-6):
            raise ValueError("pilot symbols must be unit modulus")
        object.__setattr__(self, "rx_pilots", rx)
        object.__setattr__(self, "pilot_symbols", pilots)


@dataclass(frozen=True)
class LsEstimate:
    h_ls: np.ndarray     # (t_dmrs, f_dmrs) complex64
    noise_var: float

    def __post_init__(self) -> None:
        if self.noise_var < 0:
            raise ValueError("noise variance must be >= 0")


@dataclass(frozen=True)
class ChannelEstimateGrid:
    h: np.ndarray        # (n_symbols, 12 * prb_count) complex64
    noise_var: float


@dataclass(frozen=True)
class PdpModel:
    """Assumed power-delay profile: (delay seconds, linear power) taps."""

    taps: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        delays = [d for d, _ in self.taps]
        powers = [p for _, p in self.taps]
        if not self.taps:
            raise ValueError("PDP needs at least one tap")
        if any(d < 0 for d in delays) or any(b < a for a, b in zip(delays, delays[1:])):
            raise ValueError("tap delays must be >= 0 and ascending")
        if any(p <= 0 for p in powers):
            raise ValueError("tap powers must be positive")
        if abs(sum(powers) - 1.0) > 1e-9:
            raise ValueError(f"tap powers sum to {sum(powers)}, expected 1")

    @classmethod
    def from_profile(cls, profile: TdlProfile) -> "PdpModel":
        pairs = sorted(zip(profile.delays_s, profile.powers_lin))
        total = sum(p for _, p in pairs)
        return cls(tuple((float(d), float(p / total)) for d, p in pairs))

    @classmethod
    def uniform(cls, max_delay_s: float, n_taps: int = 256) -> "PdpModel":
        # Tap spacing must stay below the delay resolution of the widest
        # supported aperture (~10 ns at 273 PRB / 60 kHz pilot spacing),
        # or the quantized grid truncates the covariance rank and the
        # mismatch becomes a discretization artifact instead of the
        # intended wrong-delay-spread assumption.
        delays = np.linspace(0.0, max_delay_s, n_taps)
        return cls(tuple((float(d), 1.0 / n_taps) for d in delays))

    @property
    def delays(self) -> np.ndarray:
        return np.array([d for d, _ in self.taps])

    @property
    def powers(self) -> np.ndarray:
        return np.array([p for _, p in self.taps])


# ---------------------------------------------------------------------------
# LS estimation and noise variance
# ---------------------------------------------------------------------------

def ls_estimate(obs: DmrsObservation) -> LsEstimate:
    """Per-pilot division of received by transmitted pilots.

    Pilots are unit modulus, so this is the unbiased LS estimate; the
    attached noise variance comes from estimate_noise_var.
    """
    h_ls = obs.rx_pilots / obs.pilot_symbols
    return LsEstimate(h_ls=h_ls, noise_var=estimate_noise_var(h_ls))


def estimate_noise_var(h_ls: np.ndarray) -> float:
    """Frequency-difference noise power estimate.

    sigma^2 = mean |h[t,f+1] - h[t,f]|^2 / 2, clamped to >= 1e-12. Assumes
    the channel varies slowly across one pilot spacing; channel
    selectivity biases the estimate high by E|dh|^2/2.
    """
    h = np.asarray(h_ls)
    if h.ndim != 2 or h.shape[1] < 4:
        raise ValueError("need a (symbols, >=4 subcarriers) pilot grid")
    diffs = np.diff(h.astype(np.complex128), axis=1)
    est = float(np.mean(np.abs(diffs) ** 2) / 2.0)
    return max(est, NOISE_VAR_FLOOR)


# ---------------------------------------------------------------------------
# MMSE (Wiener) estimation
# ---------------------------------------------------------------------------

def build_freq_covariance(pdp: PdpModel, subcarrier_spacing_hz: float,
                          pilot_spacing_sc: int, n: int) -> np.ndarray:
    """Frequency correlation R[k,l] = sum_i p_i exp(-j 2 pi df (k-l) tau_i).

    df is the pilot spacing in Hz. Hermitian Toeplitz with unit diagonal
    (tap powers are normalized).
    """
    if n < 1:
        raise ValueError("matrix size must be >= 1")
    df = subcarrier_spacing_hz * pilot_spacing_sc
    lags = np.arange(n)
    corr = np.exp(-2j * np.pi * df * np.outer(lags, pdp.delays)) @ pdp.powers
    return scipy.linalg.toeplitz(corr, np.conj(corr))


@lru_cache(maxsize=32)
def _covariance_eig(taps: tuple[tuple[float, float], ...], scs_hz: float,
                    pilot_spacing_sc: int, n: int) -> tuple[np.ndarray, np.ndarray]:
    r = build_freq_covariance(PdpModel(taps), scs_hz, pilot_spacing_sc, n)
    eigvals, eigvecs = np.linalg.eigh(r)
    eigvals.flags.writeable = False
    eigvecs.flags.writeable = False
    return eigvals, eigvecs


def mmse_filter(h_ls: np.ndarray, r: np.ndarray, noise_var: float) -> np.ndarray:
    """Apply h_hat = R (R + sigma^2 I)^{-1} h_ls along the frequency axis.

    Solved through the Hermitian eigendecomposition of R (no explicit
    inverse): h_hat = U diag(lam / (lam + sigma^2 + reg)) U^H h_ls, with
    the regularizer stepping 1e-9 -> 1e-6 before FactorizationFailure.
    """
    eigvals, eigvecs = np.linalg.eigh(np.asarray(r, dtype=np.complex128))
    return _mmse_apply(h_ls, eigvals, eigvecs, noise_var)


def _mmse_apply(h_ls: np.ndarray, eigvals: np.ndarray, eigvecs: np.ndarray,
                noise_var: float) -> np.ndarray:
    if noise_var <= 0:
        raise ValueError("noise variance must be > 0")
    for reg in (1e-9, 1e-6):
        denom = eigvals + noise_var + reg
        if np.all(denom > 0):
            shrink = eigvals / denom
            coeffs = eigvecs.conj().T @ h_ls.astype(np.complex128).T
            filtered = eigvecs @ (shrink[:, None] * coeffs)
            return np.ascontiguousarray(filtered.T, dtype=np.complex64)
    raise FactorizationFailure(
        "R + sigma^2 I is not positive definite after 1e-9 and 1e-6 regularization"
    )


def mmse_estimate(ls: LsEstimate, pdp: PdpModel, *,
                  subcarrier_spacing_hz: float = 30e3,
                  pilot_spacing_sc: int = PILOT_SPACING_SC) -> np.ndarray:
    """Wiener-filter the LS estimate per DMRS symbol over frequency."""
    n = ls.h_ls.shape[1]
    eigvals, eigvecs = _covariance_eig(pdp.taps, subcarrier_spacing_hz,
                                       pilot_spacing_sc, n)
    return _mmse_apply(ls.h_ls, eigvals, eigvecs, ls.noise_var)


# ---------------------------------------------------------------------------
# Model bank, selection, stitching
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BankEntry:
    snr_bucket_db: int
    prb_size: int
    blob_file: str
    golden_file: str | None = None


class ModelBank:
    """Engines indexed by (SNR bucket dB, PRB size), loaded from bank.yaml."""

    def __init__(self, entries: tuple[BankEntry, ...],
                 engines: dict[tuple[int, int], eng.Engine],
                 directory: Path) -> None:
        self.entries = entries
        self._engines = engines
        self.directory = directory
        self.buckets = tuple(sorted({e.snr_bucket_db for e in entries}))
        self.prb_sizes = tuple(sorted({e.prb_size for e in entries}))

    @classmethod
    def load(cls, directory: str | Path) -> "ModelBank":
        directory = Path(directory)
        manifest_path = directory / "bank.yaml"
        if not manifest_path.is_file():
            raise BankError(f"no bank.yaml in {directory}")
        with open(manifest_path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
        if not isinstance(doc, dict) or "models" not in doc:
            raise BankError("bank.yaml must be a mapping with a 'models' list")
        unknown = set(doc) - {"version", "models", "provenance"}
        if unknown:
            raise BankError(f"bank.yaml has unknown keys {sorted(unknown)}")

        entries: list[BankEntry] = []
        engines: dict[tuple[int, int], eng.Engine] = {}
        last_key: tuple[int, int] | None = None
        for i, row in enumerate(doc["models"] or []):
            missing = {"snr_bucket_db", "prb_size", "blob"} - set(row)
            if missing:
                raise BankError(f"models[{i}] missing keys {sorted(missing)}")
            bucket = int(row["snr_bucket_db"])
            prb = int(row["prb_size"])
            if bucket not in SNR_BUCKETS_DB:
                raise BankError(f"models[{i}]: bucket {bucket} dB is not on the "
                                f"{SNR_BUCKETS_DB[0]}..{SNR_BUCKETS_DB[-1]} step-5 grid")
            if prb not in PRB_MODEL_SIZES:
                raise BankError(f"models[{i}]: prb size {prb} not in {PRB_MODEL_SIZES}")
            key = (bucket, prb)
            if last_key is not None and key <= last_key:
                raise BankError("bank entries must be strictly increasing in (bucket, prb)")
            last_key = key
            entry = BankEntry(bucket, prb, row["blob"], row.get("goldens"))
            try:
                engine = eng.load_engine_file(directory / entry.blob_file)
            except (OSError, eng.EngineFormatError) as exc:
                raise BankError(f"blob {entry.blob_file!r} failed to load: {exc}") from exc
            if (engine.meta.snr_bucket_db, engine.meta.prb_size) != key:
                raise BankError(
                    f"blob {entry.blob_file!r} metadata "
                    f"{(engine.meta.snr_bucket_db, engine.meta.prb_size)} != listed {key}"
                )
            entries.append(entry)
            engines[key] = engine
        if not entries:
            raise BankError("bank.yaml lists no models")
        return cls(tuple(entries), engines, directory)

    def engine(self, snr_bucket_db: int, prb_size: int) -> eng.Engine:
        try:
            return self._engines[(snr_bucket_db, prb_size)]
        except KeyError:
            raise BankError(f"bank has no model for ({snr_bucket_db} dB, {prb_size} PRB)") from None


def select_model(snr_est_db: float, prb_block_size: int, bank: ModelBank) -> tuple[int, int]:
    """Pick the bank key whose bucket is nearest the estimated SNR.

    The estimate is clamped to the canonical -10..40 dB range first;
    exact midpoints break toward the lower bucket.
    """
    if prb_block_size not in bank.prb_sizes:
        raise UnsupportedPrbSize(
            f"prb size {prb_block_size} not in bank sizes {bank.prb_sizes}")
    snr = min(max(float(snr_est_db), SNR_BUCKETS_DB[0]), SNR_BUCKETS_DB[-1])
    best = bank.buckets[0]
    best_dist = abs(snr - best)
    for bucket in bank.buckets[1:]:
        dist = abs(snr - bucket)
        if dist < best_dist:
            best, best_dist = bucket, dist
    return best, prb_block_size


def estimate_snr(ls: LsEstimate, engine: eng.Engine | None = None) -> float:
    """SNR in dB from the engine's SNR head, or the classical fallback.

    The fallback (used by non-CNN pipelines) is
    10 log10(mean|h_ls|^2 / sigma_hat^2 - 1), floored at -60 dB.
    """
    if engine is None:
        ratio = float(np.mean(np.abs(ls.h_ls.astype(np.complex128)) ** 2)) / max(
            ls.noise_var, NOISE_VAR_FLOOR)
        return 10.0 * math.log10(max(ratio - 1.0, 1e-6))
    packed = pack_complex_to_planar(TensorValue.wrap("ls", ls.h_ls))
    outputs = eng.infer_all(engine, TensorValue(engine.input_spec, packed.data))
    snr_out = next((v for k, v in outputs.items() if k == "snr_db"), None)
    if snr_out is None:
        raise SpecMismatch("engine exposes no 'snr_db' output head")
    return float(snr_out.data.reshape(-1)[0])


def decompose_prbs(n: int, supported: tuple[int, ...] = PRB_MODEL_SIZES) -> list[int]:
    """Greedy largest-first cover of an n-PRB allocation by supported sizes."""
    if n < 1:
        raise ValueError("allocation must be >= 1 PRB")
    sizes = sorted(supported, reverse=True)
    if not sizes or sizes[-1] != 1:
        raise UnsupportedPrbSize("supported sizes must include 1 to cover any allocation")
    blocks: list[int] = []
    remaining = n
    for size in sizes:
        while remaining >= size:
            blocks.append(size)
            remaining -= size
    return blocks


@dataclass(frozen=True)
class CnnSelection:
    snr_est_db: float
    snr_bucket_db: int
    blocks: tuple[int, ...]


def cnn_estimate(ls: LsEstimate, bank: ModelBank) -> tuple[np.ndarray, CnnSelection]:
    """Denoise the LS estimate with the engine bank.

    1. decompose the allocation into supported block sizes;
    2. estimate SNR with the SNR head of the first (largest) block's
       engine, provisionally picked via the classical estimate;
    3. select the bucket nearest that SNR;
    4. per block, pack the LS sub-band planar, infer, unpack;
    5. stitch: concatenate block outputs along frequency, no overlap.
    """
    t_dmrs, f_dmrs = ls.h_ls.shape
    if f_dmrs % PILOTS_PER_PRB:
        raise ValueError(f"{f_dmrs} pilot subcarriers is not a whole number of PRBs")
    prb_count = f_dmrs // PILOTS_PER_PRB
    blocks = tuple(decompose_prbs(prb_count, bank.prb_sizes))

    provisional = select_model(estimate_snr(ls), blocks[0], bank)[0]
    head_engine = bank.engine(provisional, blocks[0])
    head_width = PILOTS_PER_PRB * blocks[0]
    head_ls = LsEstimate(ls.h_ls[:, :head_width], ls.noise_var)
    snr_est = estimate_snr(head_ls, head_engine)
    bucket = select_model(snr_est, blocks[0], bank)[0]

    pieces: list[np.ndarray] = []
    offset = 0
    for block in blocks:
        width = PILOTS_PER_PRB * block
        sub = np.ascontiguousarray(ls.h_ls[:, offset:offset + width])
        engine = bank.engine(bucket, block)
        packed = pack_complex_to_planar(TensorValue.wrap("ls", sub))
        denoised = eng.infer(engine, TensorValue(engine.input_spec, packed.data))
        pieces.append(unpack_planar_to_complex(denoised).data)
        offset += width
    stitched = np.concatenate(pieces, axis=1)
    return stitched, CnnSelection(snr_est_db=snr_est, snr_bucket_db=bucket, blocks=blocks)


# ---------------------------------------------------------------------------
# DMRS -> full grid interpolation (shared by all estimators)
# ---------------------------------------------------------------------------

def interpolate_grid(dmrs_est: np.ndarray, noise_var: float, *,
                     n_symbols: int, prb_count: int,
                     dmrs_symbol_indices: tuple[int, ...],
                     pilot_subcarriers: np.ndarray | None = None) -> ChannelEstimateGrid:
    """Linear interpolation across frequency, nearest-symbol copy across time.

    Comb pilot positions map onto all 12*prb subcarriers; beyond the
    outermost pilots the nearest pilot value is held (no extrapolation).
    Applied identically downstream of LS, MMSE and CNN estimators.
    """
    dmrs_est = np.asarray(dmrs_est)
    t_dmrs, f_dmrs = dmrs_est.shape
    if t_dmrs != len(dmrs_symbol_indices):
        raise ValueError("one estimate row per DMRS symbol required")
    if t_dmrs < 1:
        raise ValueError("need at least one DMRS symbol")
    n_sc = 12 * prb_count
    if pilot_subcarriers is None:
        pilot_subcarriers = np.arange(0, n_sc, PILOT_SPACING_SC)
    if pilot_subcarriers.size != f_dmrs:
        raise ValueError("pilot position list does not match the estimate width")

    all_sc = np.arange(n_sc)
    rows = np.empty((t_dmrs, n_sc), dtype=np.complex64)
    for t in range(t_dmrs):
        re = np.interp(all_sc, pilot_subcarriers, dmrs_est[t].real)
        im = np.interp(all_sc, pilot_subcarriers, dmrs_est[t].imag)
        rows[t] = (re + 1j * im).astype(np.complex64)

    dmrs_idx = np.asarray(dmrs_symbol_indices)
    grid = np.empty((n_symbols, n_sc), dtype=np.complex64)
    for s in range(n_symbols):
        nearest = int(np.argmin(np.abs(dmrs_idx - s)))  # tie -> earlier symbol
        grid[s] = rows[nearest]
    return ChannelEstimateGrid(h=grid, noise_var=noise_var)
