"""Shared fixtures: identity engine banks and small helpers."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
import yaml

from aerialforge import engine as eng
from aerialforge.chanest import PILOTS_PER_PRB


def make_denoiser_engine_bytes(t: int, f: int, *, width: int = 32,
                               snr_bucket_db: int = 0, prb_size: int = 0,
                               weights=None, snr_bias_db: float = 0.0) -> bytes:
    """Serialize one denoiser-family engine; identity weights by default."""
    layers = eng.denoiser_layers(t, f, width=width)
    input_spec, outputs = eng.denoiser_io(t, f)
    if weights is None:
        weights = eng.identity_denoiser_weights(layers, snr_bias_db=snr_bias_db)
    meta = eng.ModelMeta(snr_bucket_db=snr_bucket_db, prb_size=prb_size)
    return eng.serialize_engine(layers, weights, meta,
                                input_spec=input_spec, outputs=outputs)


def write_identity_bank(directory: Path, *, prb_sizes=(1, 4, 16, 64, 272),
                        buckets=(0,), t_dmrs: int = 1, width: int = 32,
                        snr_bias_db: float = 0.0) -> Path:
    """Write a bank of identity engines covering the given sizes and buckets."""
    directory.mkdir(parents=True, exist_ok=True)
    models = []
    for bucket in sorted(buckets):
        for prb in sorted(prb_sizes):
            blob = make_denoiser_engine_bytes(
                t_dmrs, PILOTS_PER_PRB * prb, width=width,
                snr_bucket_db=bucket, prb_size=prb, snr_bias_db=snr_bias_db)
            name = f"model_snr{bucket:+d}_prb{prb}.aerb"
            (directory / name).write_bytes(blob)
            models.append({"snr_bucket_db": bucket, "prb_size": prb, "blob": name})
    with open(directory / "bank.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"version": 1, "models": models}, fh, sort_keys=False)
    return directory


@pytest.fixture(scope="session")
def identity_bank(tmp_path_factory) -> Path:
    """Session-scoped identity bank over all canonical PRB sizes."""
    root = tmp_path_factory.mktemp("bank")
    return write_identity_bank(root)


@pytest.fixture(scope="session")
def small_identity_bank(tmp_path_factory) -> Path:
    """Identity bank limited to small sizes, for faster tests."""
    root = tmp_path_factory.mktemp("bank_small")
    return write_identity_bank(root, prb_sizes=(1, 4, 16))


def random_complex64(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)).astype(np.complex64)
