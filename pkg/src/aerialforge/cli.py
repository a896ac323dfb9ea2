"""Command-line harness: simulate | compare | dataset | validate-blob.

Exit codes: 0 success, 2 configuration error, 3 runtime/format error,
4 golden-vector parity failure. All output is deterministic given the
flags and seed; the wall_time_ms column is the one exception and is
dropped under --no-timing so reports can be compared byte for byte.

AERIAL_FORGE_THREADS caps the number of worker threads used to spread
(kind, snr) cells; per-slot results are reduced in slot order, so the
report never depends on scheduling.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import dataset as ds
from . import engine as eng
from .graph import EstimatorConfig, GraphError, GraphManifest, build_graph, load_manifest
from .linklevel import ChannelConfig, GridConfig, SlotMetrics, run_slot_graph
from .nodes import default_registry
from .tensors import SpecMismatch

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_PARITY = 4

CSV_SCHEMA_LINE = "# aerialforge results schema v1"
RESULT_COLUMNS = ("estimator", "snr_db", "slots", "mse_dmrs", "ber",
                  "sinr_eff_db", "tput_proxy_bits", "wall_time_ms")


class ConfigError(ValueError):
    pass


def _parse_snrs(text: str) -> list[float]:
    """Either "lo:hi:step" (inclusive) or a comma-separated list."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ConfigError(f"snr range {text!r} must be lo:hi:step")
        lo, hi, step = (float(p) for p in parts)
        if step <= 0:
            raise ConfigError("snr range step must be > 0")
        values = []
        v = lo
        while v <= hi + 1e-9:
            values.append(round(v, 6))
            v += step
        return values
    try:
        return [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad snr list {text!r}") from exc


def _grid_from_manifest(manifest: GraphManifest, qam_order: int) -> GridConfig:
    """Recover the grid dimensions the manifest's specs were written for."""
    est = manifest.node("est")
    interp = manifest.node("interp")
    if est is None or interp is None:
        raise ConfigError("manifest must contain 'est' and 'interp' nodes")
    rx_spec = est.input_spec("rx_pilots")
    if rx_spec is None:
        raise ConfigError("estimator node must declare an rx_pilots input")
    t_dmrs, f_dmrs = rx_spec.shape
    if f_dmrs % 6:
        raise ConfigError(f"{f_dmrs} pilot subcarriers is not a whole number of PRBs")
    n_symbols = int(interp.params.get("n_symbols", 14))
    dmrs_raw = str(interp.params.get("dmrs_symbols", "2"))
    dmrs_idx = tuple(int(tok) for tok in dmrs_raw.split(",") if tok.strip())
    if len(dmrs_idx) != t_dmrs:
        raise ConfigError("interp dmrs_symbols and estimator input height disagree")
    n_prb = f_dmrs // 6
    n_data = min(10, n_symbols - len(dmrs_idx) - min(dmrs_idx) - 1)
    return GridConfig(n_prb=n_prb, n_symbols=n_symbols, n_data_symbols=n_data,
                      dmrs_symbol_indices=dmrs_idx, qam_order=qam_order)


@dataclass(frozen=True)
class ResultRow:
    estimator: str
    snr_db: float
    slots: int
    mse_dmrs: float
    ber: float
    sinr_eff_db: float
    tput_proxy_bits: float
    wall_time_ms: float

    def values(self, timing: bool) -> list:
        row = [self.estimator, _fmt(self.snr_db), str(self.slots),
               _fmt(self.mse_dmrs), _fmt(self.ber), _fmt(self.sinr_eff_db),
               _fmt(self.tput_proxy_bits)]
        if timing:
            row.append(_fmt(self.wall_time_ms))
        return row


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def _aggregate(kind: str, snr_db: float, metrics: list[SlotMetrics],
               wall_ms: float) -> ResultRow:
    return ResultRow(
        estimator=kind,
        snr_db=snr_db,
        slots=len(metrics),
        mse_dmrs=_mean([m.mse_dmrs for m in metrics]),
        ber=_mean([m.ber for m in metrics]),
        sinr_eff_db=_mean([m.sinr_eff_db for m in metrics]),
        tput_proxy_bits=_mean([m.tput_proxy_bits for m in metrics]),
        wall_time_ms=wall_ms,
    )


def _thread_count() -> int:
    raw = os.environ.get("AERIAL_FORGE_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigError(f"AERIAL_FORGE_THREADS={raw!r} is not an integer") from None


def _run_cells(manifest: GraphManifest, kinds: list[str], snrs: list[float],
               slots: int, seed: int, channel: ChannelConfig,
               qam_order: int, base_dir: Path) -> list[ResultRow]:
    grid = _grid_from_manifest(manifest, qam_order)
    graphs = {}
    for kind in kinds:
        cfg = manifest.estimator_config
        if cfg is None:
            raise ConfigError("manifest has no estimator_config")
        swapped = GraphManifest(
            nodes=manifest.nodes, edges=manifest.edges, adapters=manifest.adapters,
            estimator_config=EstimatorConfig(
                kind=kind, model_dir=cfg.model_dir,
                snr_grid=cfg.snr_grid, prb_model_sizes=cfg.prb_model_sizes),
        )
        graphs[kind] = build_graph(swapped, default_registry(), base_dir=base_dir)

    def one_cell(kind: str, snr: float) -> ResultRow:
        start = time.perf_counter()
        metrics = [run_slot_graph(graphs[kind], grid, channel, snr, seed, slot_index=s)
                   for s in range(slots)]
        wall_ms = (time.perf_counter() - start) * 1e3
        return _aggregate(kind, snr, metrics, wall_ms)

    cells = [(kind, snr) for kind in kinds for snr in snrs]
    workers = min(_thread_count(), len(cells))
    if workers == 1:
        rows = [one_cell(kind, snr) for kind, snr in cells]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda c: one_cell(*c), cells))
    rows.sort(key=lambda r: (kinds.index(r.estimator), r.snr_db))
    return rows


def _write_rows(path: Path, rows: list[ResultRow], fmt: str, timing: bool,
                gains: dict[tuple[str, float], dict[str, float]] | None = None) -> None:
    columns = list(RESULT_COLUMNS if timing else RESULT_COLUMNS[:-1])
    if gains is not None:
        columns += ["tput_gain_pct", "mse_gain_db"]
    if fmt == "csv":
        lines = [CSV_SCHEMA_LINE, ",".join(columns)]
        for row in rows:
            cells = row.values(timing)
            if gains is not None:
                g = gains[(row.estimator, row.snr_db)]
                cells += [_fmt(g["tput_gain_pct"]), _fmt(g["mse_gain_db"])]
            lines.append(",".join(cells))
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        payload = []
        for row in rows:
            entry = dict(zip(RESULT_COLUMNS, [
                row.estimator, row.snr_db, row.slots, row.mse_dmrs, row.ber,
                row.sinr_eff_db, row.tput_proxy_bits, row.wall_time_ms]))
            if not timing:
                entry.pop("wall_time_ms")
            if gains is not None:
                entry.update(gains[(row.estimator, row.snr_db)])
            payload.append(entry)
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                        encoding="utf-8")


def _channel_from_args(args: argparse.Namespace) -> ChannelConfig:
    return ChannelConfig(profile=args.profile, delay_spread_s=args.delay_spread,
                         speed_mps=args.speed, fading=args.fading)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _load_manifest_checked(path: Path) -> GraphManifest:
    if not path.is_file():
        raise ConfigError(f"manifest not found: {path}")
    try:
        return load_manifest(path)
    except GraphError as exc:
        raise ConfigError(f"invalid manifest {path}: {exc}") from exc


def cmd_simulate(args: argparse.Namespace) -> int:
    manifest_path = Path(args.manifest)
    manifest = _load_manifest_checked(manifest_path)
    if manifest.estimator_config is None:
        raise ConfigError("manifest has no estimator_config")
    snrs = _parse_snrs(args.snr)
    rows = _run_cells(manifest, [manifest.estimator_config.kind], snrs, args.slots,
                      args.seed, _channel_from_args(args), args.qam,
                      manifest_path.parent)
    _write_rows(Path(args.out), rows, args.format, timing=not args.no_timing)
    print(f"wrote {len(rows)} rows to {args.out}")
    return EXIT_OK


def cmd_compare(args: argparse.Namespace) -> int:
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    if len(kinds) < 2:
        raise ConfigError("compare needs at least two estimator kinds")
    manifest_path = Path(args.manifest)
    manifest = _load_manifest_checked(manifest_path)
    snrs = _parse_snrs(args.snr)
    rows = _run_cells(manifest, kinds, snrs, args.slots, args.seed,
                      _channel_from_args(args), args.qam, manifest_path.parent)

    baseline = {r.snr_db: r for r in rows if r.estimator == kinds[0]}
    gains: dict[tuple[str, float], dict[str, float]] = {}
    for row in rows:
        base = baseline[row.snr_db]
        tput_gain = (100.0 * (row.tput_proxy_bits - base.tput_proxy_bits)
                     / base.tput_proxy_bits) if base.tput_proxy_bits else 0.0
        if row.mse_dmrs > 0 and base.mse_dmrs > 0:
            mse_gain = 10.0 * math.log10(base.mse_dmrs / row.mse_dmrs)
        else:
            mse_gain = 0.0
        gains[(row.estimator, row.snr_db)] = {
            "tput_gain_pct": tput_gain, "mse_gain_db": mse_gain}
    _write_rows(Path(args.out), rows, args.format, timing=not args.no_timing,
                gains=gains)
    print(f"wrote {len(rows)} rows to {args.out} (baseline: {kinds[0]})")
    return EXIT_OK


def cmd_dataset(args: argparse.Namespace) -> int:
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    prb_sizes = [int(p) for p in args.prb_sizes.split(",") if p.strip()]
    snrs = _parse_snrs(args.snrs)
    count = ds.generate_dataset(
        args.out, args.count, args.seed,
        prb_sizes=prb_sizes, snr_list_db=snrs, t_dmrs=args.t_dmrs)
    digest = hashlib.sha256(Path(args.out).read_bytes()).hexdigest()
    print(f"wrote {count} records to {args.out}")
    print(f"sha256 {digest}")
    return EXIT_OK


def cmd_validate_blob(args: argparse.Namespace) -> int:
    blob_path = Path(args.blob)
    golden_path = Path(args.golden)
    for p in (blob_path, golden_path):
        if not p.is_file():
            raise ConfigError(f"file not found: {p}")
    engine = eng.load_engine(blob_path.read_bytes())
    golden = eng.read_golden_vectors(golden_path.read_bytes(), engine,
                                     rtol=args.rtol, atol=args.atol)
    report = eng.verify_golden(engine, golden)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_PARITY


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", required=True, help="pipeline manifest YAML")
    p.add_argument("--slots", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--snr", default="0:20:5", help="dB list 'a,b,c' or range 'lo:hi:step'")
    p.add_argument("--out", required=True, help="report file")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--no-timing", action="store_true",
                   help="omit wall_time_ms for byte-identical reports")
    p.add_argument("--qam", type=int, default=4, choices=(4, 16, 64))
    p.add_argument("--profile", default="tdl-c")
    p.add_argument("--delay-spread", type=float, default=300e-9)
    p.add_argument("--speed", type=float, default=2.235)
    p.add_argument("--fading", choices=("rayleigh", "static"), default="rayleigh")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aerialforge",
        description="link-level evaluation harness for pluggable channel estimators")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the manifest's estimator over an SNR sweep")
    _add_run_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="A/B estimator comparison on identical seeds")
    p_cmp.add_argument("--kinds", required=True,
                       help="comma list; first entry is the baseline")
    _add_run_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare)

    p_ds = sub.add_parser("dataset", help="generate a training dataset (.aeds)")
    p_ds.add_argument("--count", type=int, required=True)
    p_ds.add_argument("--seed", type=int, default=0)
    p_ds.add_argument("--out", required=True)
    p_ds.add_argument("--prb-sizes", default="1,4,16")
    p_ds.add_argument("--snrs", default="-5,5,15")
    p_ds.add_argument("--t-dmrs", type=int, default=1)
    p_ds.set_defaults(func=cmd_dataset)

    p_vb = sub.add_parser("validate-blob", help="check a blob against golden vectors")
    p_vb.add_argument("--blob", required=True)
    p_vb.add_argument("--golden", required=True)
    p_vb.add_argument("--rtol", type=float, default=1e-4)
    p_vb.add_argument("--atol", type=float, default=1e-5)
    p_vb.set_defaults(func=cmd_validate_blob)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (eng.EngineFormatError, GraphError, SpecMismatch, ds.DatasetFormatError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
