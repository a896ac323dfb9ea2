"""Uplink link-level simulator: OFDM grid, DMRS, TDL fading, AWGN, metrics.

One slot runs the full chain: payload bits -> QAM -> resource grid with
comb-2 DMRS -> per-RE channel (frequency-domain CFR multiply, block
fading) + AWGN at the requested SNR -> channel estimator (via the graph
runtime) -> interpolation -> per-RE MMSE equalization -> hard demod ->
metrics.

Everything is a pure function of (config, seed, slot index). The RNG
streams for bits, pilots, channel and noise are derived independently of
the estimator kind, so runs at equal (seed, snr) see bit-identical
grids across estimators (the A/B comparison contract).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import modem
from .chanest import PILOT_SPACING_SC, PILOTS_PER_PRB
from .graph import (
    Edge,
    EstimatorConfig,
    Graph,
    GraphManifest,
    NodeDescriptor,
    PortRef,
    build_graph,
)
from .nodes import default_registry
from .tdl import (
    SLOT_DURATION_30KHZ_S,
    ChannelRealization,
    TdlProfile,
    cir_to_cfr,
    doppler_from_speed,
    gen_tdl_channel,
)
from .tensors import TensorSpec, TensorValue

_STREAM_BITS = 0x42495453   # "BITS"
_STREAM_DMRS = 0x444D5253   # "DMRS"
_STREAM_NOISE = 0x4E4F4953  # "NOIS"

#: QPSK pilot alphabet; these four points are unit modulus exactly in float32.
_PILOT_ALPHABET = np.array([1.0, 1.0j, -1.0, -1.0j], dtype=np.complex64)

TPUT_CAP_BITS = 8.0  # log2 of the largest constellation the proxy credits


@dataclass(frozen=True)
class GridConfig:
    """Slot-level resource grid parameters."""

    n_prb: int = 273
    scs_hz: float = 30e3
    n_symbols: int = 14
    n_data_symbols: int = 10
    dmrs_symbol_indices: tuple[int, ...] = (2,)
    qam_order: int = 4
    n_layers: int = 1

    def __post_init__(self) -> None:
        if self.n_prb < 1:
            raise ValueError("need at least one PRB")
        if self.n_layers != 1:
            raise ValueError("only single-layer transmission is supported")
        if self.qam_order not in modem.QAM_ORDERS:
            raise ValueError(f"qam_order must be one of {modem.QAM_ORDERS}")
        if not self.dmrs_symbol_indices:
            raise ValueError("need at least one DMRS symbol")
        if any(s < 0 or s >= self.n_symbols for s in self.dmrs_symbol_indices):
            raise ValueError("DMRS symbol indices must lie inside the slot")
        if len(self.data_symbol_indices) != self.n_data_symbols:
            raise ValueError(
                f"{self.n_data_symbols} data symbols + DMRS do not fit in "
                f"{self.n_symbols} symbols")

    @property
    def n_sc(self) -> int:
        return 12 * self.n_prb

    @property
    def t_dmrs(self) -> int:
        return len(self.dmrs_symbol_indices)

    @property
    def f_dmrs(self) -> int:
        return PILOTS_PER_PRB * self.n_prb

    @property
    def pilot_subcarriers(self) -> np.ndarray:
        return np.arange(0, self.n_sc, PILOT_SPACING_SC)

    @property
    def data_symbol_indices(self) -> tuple[int, ...]:
        """First n_data_symbols non-DMRS symbols after the first DMRS symbol."""
        first_dmrs = min(self.dmrs_symbol_indices)
        candidates = [s for s in range(first_dmrs + 1, self.n_symbols)
                      if s not in self.dmrs_symbol_indices]
        return tuple(candidates[: self.n_data_symbols])

    @property
    def bits_per_slot(self) -> int:
        return self.n_data_symbols * self.n_sc * int(math.log2(self.qam_order))


@dataclass(frozen=True)
class ChannelConfig:
    """Fading scenario: profile, delay spread, mobility."""

    profile: str = "tdl-c"
    delay_spread_s: float = 300e-9
    speed_mps: float = 2.235          # ~5 mph
    carrier_hz: float = 3.5e9
    fading: str = "rayleigh"
    n_atoms: int = 64

    @property
    def doppler_hz(self) -> float:
        return doppler_from_speed(self.speed_mps, self.carrier_hz)

    def tdl_profile(self) -> TdlProfile:
        return TdlProfile(self.profile, self.delay_spread_s)


@dataclass(frozen=True)
class SlotMetrics:
    mse_dmrs: float
    mse_grid: float
    ber: float
    sinr_eff_db: float
    tput_proxy_bits: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.ber <= 1.0:
            raise ValueError("ber must lie in [0, 1]")
        if self.mse_dmrs < 0 or self.mse_grid < 0:
            raise ValueError("mse must be >= 0")


@dataclass(frozen=True)
class SlotDebug:
    tx_grid: np.ndarray
    rx_grid: np.ndarray
    h_true: np.ndarray
    noise: np.ndarray
    h_est_dmrs: np.ndarray
    h_est_grid: np.ndarray
    x_eq: np.ndarray
    noise_var_est: float
    noise_var_true: float


@dataclass(frozen=True)
class EstimatorSetup:
    """Which estimator node to run and its parameters."""

    kind: str = "ls"
    params: dict = field(default_factory=dict)
    model_dir: str | None = None


# ---------------------------------------------------------------------------
# Grid generation
# ---------------------------------------------------------------------------

def gen_dmrs(seed: int, grid: GridConfig) -> np.ndarray:
    """Unit-modulus QPSK pilots on the comb-2 DMRS lattice, (t_dmrs, f_dmrs)."""
    rng = np.random.default_rng([seed, _STREAM_DMRS])
    idx = rng.integers(0, 4, size=(grid.t_dmrs, grid.f_dmrs))
    return _PILOT_ALPHABET[idx]


def _gen_bits(seed: int, slot_index: int, grid: GridConfig) -> np.ndarray:
    rng = np.random.default_rng([seed, _STREAM_BITS, slot_index])
    return rng.integers(0, 2, size=grid.bits_per_slot, dtype=np.uint8)


def _gen_noise(seed: int, slot_index: int, grid: GridConfig, sigma2: float) -> np.ndarray:
    rng = np.random.default_rng([seed, _STREAM_NOISE, slot_index])
    raw = rng.standard_normal((grid.n_symbols, grid.n_sc, 2))
    return math.sqrt(sigma2 / 2.0) * (raw[..., 0] + 1j * raw[..., 1])


def build_tx_grid(bits: np.ndarray, dmrs: np.ndarray, grid: GridConfig) -> np.ndarray:
    """Assemble the (n_symbols, n_sc) transmit grid; unused REs stay zero."""
    tx = np.zeros((grid.n_symbols, grid.n_sc), dtype=np.complex128)
    symbols = modem.modulate(bits, grid.qam_order)
    tx[list(grid.data_symbol_indices), :] = symbols.reshape(grid.n_data_symbols, grid.n_sc)
    for row, sym in enumerate(grid.dmrs_symbol_indices):
        tx[sym, grid.pilot_subcarriers] = dmrs[row]
    return tx


def channel_grid(realization: ChannelRealization, grid: GridConfig) -> np.ndarray:
    """Per-RE CFR under block fading: one frequency row spans the slot."""
    cfr = cir_to_cfr(realization.delays_s, realization.gains, grid.n_sc, grid.scs_hz)
    return np.broadcast_to(cfr, (grid.n_symbols, grid.n_sc))


# ---------------------------------------------------------------------------
# Estimation pipeline manifest
# ---------------------------------------------------------------------------

def build_pipeline_manifest(grid: GridConfig, estimator: EstimatorSetup) -> GraphManifest:
    """The standard three-node receiver chain for one estimator kind."""
    t, f = grid.t_dmrs, grid.f_dmrs
    cplx = lambda name, shape: TensorSpec(name, "complex64", shape)  # noqa: E731
    est_inputs = [cplx("rx_pilots", (t, f)), cplx("pilot_symbols", (t, f))]
    if estimator.kind == "perfect":
        est_inputs.append(cplx("h_true", (t, f)))

    nodes = (
        NodeDescriptor(
            name="est",
            kind="estimator",
            params=dict(estimator.params),
            inputs=tuple(est_inputs),
            outputs=(cplx("h_est", (t, f)), TensorSpec("noise_var", "float32", (1,))),
        ),
        NodeDescriptor(
            name="interp",
            kind="chanest.interp",
            params={
                "n_symbols": grid.n_symbols,
                "n_prb": grid.n_prb,
                "dmrs_symbols": ",".join(str(s) for s in grid.dmrs_symbol_indices),
            },
            inputs=(cplx("h_in", (t, f)), TensorSpec("noise_var", "float32", (1,))),
            outputs=(cplx("h_grid", (grid.n_symbols, grid.n_sc)),),
        ),
        NodeDescriptor(
            name="eq",
            kind="eq.mmse",
            inputs=(cplx("y", (grid.n_symbols, grid.n_sc)),
                    cplx("h", (grid.n_symbols, grid.n_sc)),
                    TensorSpec("noise_var", "float32", (1,))),
            outputs=(cplx("x_eq", (grid.n_symbols, grid.n_sc)),),
        ),
    )
    edges = (
        Edge(PortRef("est", "h_est"), PortRef("interp", "h_in")),
        Edge(PortRef("est", "noise_var"), PortRef("interp", "noise_var")),
        Edge(PortRef("est", "noise_var"), PortRef("eq", "noise_var")),
        Edge(PortRef("interp", "h_grid"), PortRef("eq", "h")),
    )
    config = EstimatorConfig(kind=estimator.kind, model_dir=estimator.model_dir)
    return GraphManifest(nodes=nodes, edges=edges, estimator_config=config)


def build_pipeline_graph(grid: GridConfig, estimator: EstimatorSetup,
                         base_dir: str | Path = ".") -> Graph:
    manifest = build_pipeline_manifest(grid, estimator)
    return build_graph(manifest, default_registry(), base_dir=base_dir)


# ---------------------------------------------------------------------------
# Slot simulation
# ---------------------------------------------------------------------------

def throughput_proxy(sinr_map: np.ndarray, cap_bits: float = TPUT_CAP_BITS) -> float:
    """Capacity-style proxy: sum over REs of min(log2(1+sinr), cap).

    A stand-in comparable scalar, not 3GPP throughput: no MCS tables,
    HARQ or scheduler behind it.
    """
    sinr = np.asarray(sinr_map, dtype=np.float64)
    if not np.all(np.isfinite(sinr)):
        raise ValueError("SINR map must be finite")
    return float(np.minimum(np.log2(1.0 + sinr), cap_bits).sum())


def _slot_sinr_map(h_true: np.ndarray, h_est: np.ndarray, noise_var_est: float,
                   noise_var_true: float) -> np.ndarray:
    """Analytic per-RE post-equalization SINR.

    With equalizer tap g = conj(h_est)/(|h_est|^2 + sigma_est^2) the
    equalized symbol is g*h*x + g*n, so the distortion power per RE is
    |g h - 1|^2 + |g|^2 sigma^2 relative to the unit-power symbol.
    """
    g = np.conj(h_est.astype(np.complex128)) / (
        np.abs(h_est.astype(np.complex128)) ** 2 + noise_var_est)
    distortion = np.abs(g * h_true - 1.0) ** 2 + np.abs(g) ** 2 * noise_var_true
    return 1.0 / np.maximum(distortion, 1e-30)


def run_slot_graph(graph: Graph, grid: GridConfig, channel: ChannelConfig,
                   snr_db: float | None, seed: int, slot_index: int = 0,
                   debug: bool = False):
    """Run one slot through a prebuilt estimation pipeline graph."""
    bits = _gen_bits(seed, slot_index, grid)
    dmrs = gen_dmrs(seed, grid).astype(np.complex64)
    tx = build_tx_grid(bits, dmrs, grid)

    realization = gen_tdl_channel(
        channel.tdl_profile(), channel.doppler_hz, slot_index, seed,
        fading=channel.fading, slot_duration_s=SLOT_DURATION_30KHZ_S,
        n_atoms=channel.n_atoms)
    h_true = channel_grid(realization, grid)

    sigma2 = 0.0 if snr_db is None else 10.0 ** (-snr_db / 10.0)
    noise = _gen_noise(seed, slot_index, grid, sigma2) if sigma2 > 0 else np.zeros_like(tx)
    rx = h_true * tx + noise

    dmrs_rows = list(grid.dmrs_symbol_indices)
    rx_pilots = rx[dmrs_rows][:, grid.pilot_subcarriers].astype(np.complex64)
    h_true_pilots = h_true[dmrs_rows][:, grid.pilot_subcarriers].astype(np.complex64)

    bindings = {
        "est.rx_pilots": TensorValue.wrap("rx_pilots", rx_pilots),
        "est.pilot_symbols": TensorValue.wrap("pilot_symbols", dmrs),
        "eq.y": TensorValue.wrap("y", rx.astype(np.complex64)),
    }
    if any(name == "est.h_true" for name, _ in graph.input_ports):
        bindings["est.h_true"] = TensorValue.wrap("h_true", h_true_pilots)

    values = graph.execute_all(bindings)
    h_est = values["est.h_est"].data
    noise_var_est = float(values["est.noise_var"].data[0])
    h_grid = values["interp.h_grid"].data
    x_eq = values["eq.x_eq"].data

    data_rows = list(grid.data_symbol_indices)
    mse_dmrs = float(np.mean(np.abs(
        h_est.astype(np.complex128) - h_true_pilots.astype(np.complex128)) ** 2))
    h_true_data = h_true[data_rows]
    mse_grid = float(np.mean(np.abs(
        h_grid[data_rows].astype(np.complex128) - h_true_data) ** 2))

    rx_bits = modem.demodulate(x_eq[data_rows].reshape(-1), grid.qam_order)
    ber = float(np.mean(rx_bits != bits))

    sinr_map = _slot_sinr_map(h_true_data, h_grid[data_rows], noise_var_est, sigma2)
    tput = throughput_proxy(sinr_map)
    mean_cap = float(np.mean(np.log2(1.0 + sinr_map)))
    sinr_eff = max(2.0 ** mean_cap - 1.0, 1e-12)
    metrics = SlotMetrics(
        mse_dmrs=mse_dmrs,
        mse_grid=mse_grid,
        ber=ber,
        sinr_eff_db=10.0 * math.log10(sinr_eff),
        tput_proxy_bits=tput,
    )
    if not debug:
        return metrics
    return metrics, SlotDebug(
        tx_grid=tx, rx_grid=rx, h_true=h_true, noise=noise,
        h_est_dmrs=h_est, h_est_grid=h_grid, x_eq=x_eq,
        noise_var_est=noise_var_est, noise_var_true=sigma2,
    )


def run_slot(grid: GridConfig, channel: ChannelConfig, estimator: EstimatorSetup | str,
             snr_db: float | None, seed: int, slot_index: int = 0,
             debug: bool = False, base_dir: str | Path = "."):
    """Convenience wrapper that builds the standard pipeline per call."""
    if isinstance(estimator, str):
        estimator = EstimatorSetup(kind=estimator)
    graph = build_pipeline_graph(grid, estimator, base_dir=base_dir)
    return run_slot_graph(graph, grid, channel, snr_db, seed, slot_index, debug=debug)
