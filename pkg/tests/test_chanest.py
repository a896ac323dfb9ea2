"""Channel estimators: LS, noise variance, MMSE, selection, stitching, interpolation."""

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerialforge import engine as eng
from aerialforge.chanest import (
    PILOTS_PER_PRB,
    BankError,
    DmrsObservation,
    FactorizationFailure,
    LsEstimate,
    ModelBank,
    PdpModel,
    UnsupportedPrbSize,
    build_freq_covariance,
    cnn_estimate,
    decompose_prbs,
    estimate_noise_var,
    estimate_snr,
    interpolate_grid,
    ls_estimate,
    mmse_estimate,
    mmse_filter,
    select_model,
)
from aerialforge.tdl import TdlProfile
from aerialforge.tensors import TensorValue, pack_complex_to_planar

from conftest import make_denoiser_engine_bytes, random_complex64, write_identity_bank

PILOT_SET = np.array([1.0, 1.0j, -1.0, -1.0j], dtype=np.complex64)


def make_obs(rng, prb_count=4, t_dmrs=1, h=None, snr_db=None):
    f = PILOTS_PER_PRB * prb_count
    pilots = PILOT_SET[rng.integers(0, 4, (t_dmrs, f))]
    if h is None:
        h = random_complex64(rng, (t_dmrs, f))
    rx = (h.astype(np.complex128) * pilots)
    if snr_db is not None:
        sigma = np.sqrt(10.0 ** (-snr_db / 10.0) / 2.0)
        rx = rx + sigma * (rng.standard_normal(rx.shape) + 1j * rng.standard_normal(rx.shape))
    return DmrsObservation(
        rx_pilots=rx.astype(np.complex64), pilot_symbols=pilots,
        prb_count=prb_count, symbol_indices=tuple(range(t_dmrs)),
        subcarrier_indices=np.arange(0, 12 * prb_count, 2)), h


class TestLsEstimate:
    def test_noiseless_recovers_channel(self):
        rng = np.random.default_rng(0)
        obs, h = make_obs(rng)
        est = ls_estimate(obs)
        assert np.max(np.abs(est.h_ls - h)) <= 1e-6

    def test_all_ones(self):
        f = PILOTS_PER_PRB * 2
        ones = np.ones((1, f), dtype=np.complex64)
        obs = DmrsObservation(ones, ones, 2, (0,), np.arange(0, 24, 2))
        est = ls_estimate(obs)
        assert np.all(est.h_ls == 1.0)

    def test_matches_division_oracle_bit_exact(self):
        rng = np.random.default_rng(42)
        obs, _ = make_obs(rng, snr_db=10.0)
        est = ls_estimate(obs)
        # Element-by-element division oracle in the same dtype.
        want = np.empty_like(obs.rx_pilots)
        for t in range(obs.rx_pilots.shape[0]):
            for f in range(obs.rx_pilots.shape[1]):
                want[t, f] = obs.rx_pilots[t, f] / obs.pilot_symbols[t, f]
        assert np.array_equal(est.h_ls.view(np.float32), want.view(np.float32))

    def test_pilot_modulus_enforced(self):
        rng = np.random.default_rng(1)
        f = PILOTS_PER_PRB
        pilots = np.full((1, f), 2.0, dtype=np.complex64)
        with pytest.raises(ValueError, match="unit modulus"):
            DmrsObservation(pilots, pilots, 1, (0,), np.arange(0, 12, 2))
        del rng


class TestNoiseVariance:
    def test_flat_channel_clamps_to_floor(self):
        h = np.ones((1, 24), dtype=np.complex64)
        assert estimate_noise_var(h) == 1e-12

    def test_white_noise_monte_carlo(self):
        # Pure noise of variance v on a zero channel: mean estimate ~= v.
        rng = np.random.default_rng(3)
        v = 0.37
        估 = []
        for _ in range(100):
            n = np.sqrt(v / 2) * (rng.standard_normal((1, 1632))
                                  + 1j * rng.standard_normal((1, 1632)))
            估.append(estimate_noise_var(n.astype(np.complex64)))
        assert np.mean(估) == pytest.approx(v, rel=0.10)

    def test_too_few_subcarriers_rejected(self):
        with pytest.raises(ValueError, match=">=4"):
            estimate_noise_var(np.ones((1, 2), dtype=np.complex64))


class TestCovariance:
    def test_single_zero_delay_tap_all_ones(self):
        pdp = PdpModel(((0.0, 1.0),))
        r = build_freq_covariance(pdp, 30e3, 2, 6)
        assert np.allclose(r, np.ones((6, 6)), atol=1e-12)

    def test_two_tap_null_at_adjacent_lag(self):
        # Equal taps at 0 and tau with df*tau = 0.5: R[k,k+1] = 0.5(1+e^{-j pi}) = 0.
        df = 60e3
        tau = 0.5 / df
        pdp = PdpModel(((0.0, 0.5), (tau, 0.5)))
        r = build_freq_covariance(pdp, 30e3, 2, 8)
        off = np.diag(r, k=-1)
        assert np.max(np.abs(off)) <= 1e-12

    def test_hermitian_unit_diagonal(self):
        pdp = PdpModel.from_profile(TdlProfile("tdl-c", 300e-9))
        r = build_freq_covariance(pdp, 30e3, 2, 24)
        assert np.allclose(r, r.conj().T, atol=1e-14)
        assert np.max(np.abs(np.diag(r) - 1.0)) <= 1e-12


class TestMmse:
    def test_vanishing_noise_returns_ls(self):
        # Well-conditioned R (wide uniform PDP): sigma^2 -> 0 means no shrinkage.
        rng = np.random.default_rng(7)
        pdp = PdpModel.uniform(1.0 / 60e3, n_taps=128)
        h = random_complex64(rng, (1, 8))
        ls = LsEstimate(h_ls=h, noise_var=1e-12)
        out = mmse_estimate(ls, pdp, subcarrier_spacing_hz=30e3, pilot_spacing_sc=2)
        rel = np.linalg.norm(out - h) / np.linalg.norm(h)
        assert rel <= 1e-6

    def test_identity_covariance_scalar_shrinkage(self):
        rng = np.random.default_rng(8)
        h = random_complex64(rng, (2, 6))
        sigma2 = 0.5
        out = mmse_filter(h, np.eye(6, dtype=np.complex128), sigma2)
        want = h / (1 + sigma2)
        assert np.max(np.abs(out - want)) <= 1e-6

    def test_matched_covariance_dominates_ls(self):
        # Wiener oracle: analytic MSE in float64 plus Monte-Carlo agreement.
        rng = np.random.default_rng(9)
        pdp = PdpModel.from_profile(TdlProfile("tdl-c", 300e-9))
        n = PILOTS_PER_PRB * 4
        r = build_freq_covariance(pdp, 30e3, 2, n)
        eigvals, eigvecs = np.linalg.eigh(r)
        sqrt_r = eigvecs @ np.diag(np.sqrt(np.maximum(eigvals, 0))) @ eigvecs.conj().T

        sigma2 = 1.0  # 0 dB
        n_trials = 2000
        z = (rng.standard_normal((n_trials, n)) + 1j * rng.standard_normal((n_trials, n))) / np.sqrt(2)
        h = z @ sqrt_r.T
        noise = np.sqrt(sigma2 / 2) * (rng.standard_normal((n_trials, n))
                                       + 1j * rng.standard_normal((n_trials, n)))
        h_ls = (h + noise).astype(np.complex64)
        filtered = mmse_filter(h_ls, r, sigma2)

        mse_ls = float(np.mean(np.abs(h_ls - h) ** 2))
        mse_mmse = float(np.mean(np.abs(filtered - h) ** 2))
        analytic = sigma2 / n * float(np.sum(eigvals / (eigvals + sigma2)))
        assert mse_mmse < mse_ls
        assert mse_mmse == pytest.approx(analytic, rel=0.1)

    def test_factorization_failure_on_negative_matrix(self):
        h = np.ones((1, 4), dtype=np.complex64)
        with pytest.raises(FactorizationFailure):
            mmse_filter(h, -np.eye(4, dtype=np.complex128), 1e-9)


_FULL_GRID_BANK: list[ModelBank] = []


def full_grid_bank() -> ModelBank:
    if not _FULL_GRID_BANK:
        import tempfile
        root = Path(tempfile.mkdtemp(prefix="selbank_"))
        buckets = list(range(-10, 45, 5))
        _FULL_GRID_BANK.append(ModelBank.load(write_identity_bank(
            root, prb_sizes=(1, 4), buckets=buckets, width=4)))
    return _FULL_GRID_BANK[0]


class TestSelection:
    def test_nearest_bucket(self):
        assert select_model(12.4, 4, full_grid_bank()) == (10, 4)

    def test_clamped_above(self):
        assert select_model(55.0, 4, full_grid_bank()) == (40, 4)

    def test_midpoint_breaks_low(self):
        assert select_model(12.5, 4, full_grid_bank()) == (10, 4)

    def test_unsupported_prb(self):
        with pytest.raises(UnsupportedPrbSize):
            select_model(10.0, 7, full_grid_bank())

    @settings(max_examples=60, deadline=None)
    @given(bucket=st.sampled_from(list(range(-10, 45, 5))),
           eps=st.floats(-2.49, 2.49))
    def test_selection_invariant_within_bucket(self, bucket, eps):
        got, _ = select_model(bucket + eps, 1, full_grid_bank())
        assert got == bucket


class TestEstimateSnr:
    def test_constant_head(self):
        engine = eng.load_engine(make_denoiser_engine_bytes(1, 24, width=4,
                                                            snr_bias_db=5.0))
        rng = np.random.default_rng(11)
        ls = LsEstimate(random_complex64(rng, (1, 24)), 0.1)
        assert estimate_snr(ls, engine) == pytest.approx(5.0)

    def test_classical_fallback_monte_carlo(self):
        rng = np.random.default_rng(12)
        sigma2 = 0.1
        estimates = []
        for _ in range(100):
            noise = np.sqrt(sigma2 / 2) * (rng.standard_normal((1, 600))
                                           + 1j * rng.standard_normal((1, 600)))
            h_ls = (1.0 + noise).astype(np.complex64)
            ls = LsEstimate(h_ls, estimate_noise_var(h_ls))
            estimates.append(estimate_snr(ls))
        assert np.mean(estimates) == pytest.approx(10.0, abs=1.0)


class TestDecompose:
    def test_supported_size_passthrough(self):
        assert decompose_prbs(4) == [4]

    def test_full_band_273(self):
        assert decompose_prbs(273) == [272, 1]

    def test_21_prb(self):
        assert decompose_prbs(21) == [16, 4, 1]

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 300))
    def test_cover_property(self, n):
        blocks = decompose_prbs(n)
        assert sum(blocks) == n
        assert all(b in (1, 4, 16, 64, 272) for b in blocks)
        # Greedy: block sizes never increase along the list.
        assert all(a >= b for a, b in zip(blocks, blocks[1:]))

    def test_needs_unit_block(self):
        with pytest.raises(UnsupportedPrbSize):
            decompose_prbs(5, supported=(4, 16))


class TestCnnEstimate:
    def test_identity_engines_reproduce_ls(self, small_identity_bank):
        bank = ModelBank.load(small_identity_bank)
        rng = np.random.default_rng(13)
        h = random_complex64(rng, (1, PILOTS_PER_PRB * 20))
        ls = LsEstimate(h, 0.05)
        out, sel = cnn_estimate(ls, bank)
        assert sel.blocks == (16, 4)
        assert np.array_equal(out.view(np.float32), h.view(np.float32))

    def test_stitching_is_pure_concatenation(self, small_identity_bank):
        bank = ModelBank.load(small_identity_bank)
        rng = np.random.default_rng(14)
        h = random_complex64(rng, (1, PILOTS_PER_PRB * 20))
        ls = LsEstimate(h, 0.05)
        out, sel = cnn_estimate(ls, bank)

        pieces = []
        offset = 0
        for block in sel.blocks:
            width = PILOTS_PER_PRB * block
            engine = bank.engine(sel.snr_bucket_db, block)
            packed = pack_complex_to_planar(
                TensorValue.wrap("ls", np.ascontiguousarray(h[:, offset:offset + width])))
            res = eng.infer(engine, TensorValue(engine.input_spec, packed.data))
            pieces.append(res.data[0] + 1j * res.data[1])
            offset += width
        want = np.concatenate([p.astype(np.complex64) for p in pieces], axis=1)
        assert np.array_equal(out.view(np.float32), want.view(np.float32))

    def test_stitching_locality(self, small_identity_bank):
        # Changing the LS input inside one block only moves that block's output.
        bank = ModelBank.load(small_identity_bank)
        rng = np.random.default_rng(15)
        h = random_complex64(rng, (1, PILOTS_PER_PRB * 20))
        base, sel = cnn_estimate(LsEstimate(h, 0.05), bank)
        h2 = h.copy()
        # Block layout is [16, 4]; poke inside the second block.
        second_start = PILOTS_PER_PRB * 16
        h2[0, second_start + 3] += 1.0
        changed, _ = cnn_estimate(LsEstimate(h2, 0.05), bank)
        assert np.array_equal(changed[:, :second_start], base[:, :second_start])
        assert not np.array_equal(changed[:, second_start:], base[:, second_start:])


class TestModelBank:
    def test_missing_pair_reported(self, small_identity_bank):
        bank = ModelBank.load(small_identity_bank)
        with pytest.raises(BankError, match=r"\(15 dB, 4 PRB\)"):
            bank.engine(15, 4)

    def test_rejects_off_grid_bucket(self, tmp_path):
        bank_dir = write_identity_bank(tmp_path / "b", prb_sizes=(1,), buckets=(0,), width=4)
        text = (bank_dir / "bank.yaml").read_text().replace("snr_bucket_db: 0",
                                                            "snr_bucket_db: 3")
        (bank_dir / "bank.yaml").write_text(text)
        with pytest.raises(BankError, match="step-5 grid"):
            ModelBank.load(bank_dir)

    def test_rejects_missing_blob(self, tmp_path):
        bank_dir = write_identity_bank(tmp_path / "b2", prb_sizes=(1,), buckets=(0,), width=4)
        next(bank_dir.glob("*.aerb")).unlink()
        with pytest.raises(BankError, match="failed to load"):
            ModelBank.load(bank_dir)


class TestEstimatorPurity:
    def test_mmse_bit_identical_across_calls(self):
        rng = np.random.default_rng(55)
        pdp = PdpModel.from_profile(TdlProfile("tdl-c", 300e-9))
        ls = LsEstimate(random_complex64(rng, (1, 24)), 0.2)
        a = mmse_estimate(ls, pdp)
        b = mmse_estimate(ls, pdp)
        assert np.array_equal(a.view(np.float32), b.view(np.float32))

    def test_cnn_bit_identical_across_calls(self, small_identity_bank):
        bank = ModelBank.load(small_identity_bank)
        rng = np.random.default_rng(56)
        ls = LsEstimate(random_complex64(rng, (1, PILOTS_PER_PRB * 5)), 0.2)
        a, _ = cnn_estimate(ls, bank)
        b, _ = cnn_estimate(ls, bank)
        assert np.array_equal(a.view(np.float32), b.view(np.float32))


class TestInterpolateGrid:
    def test_constant_extends_constant(self):
        c = np.full((1, 12), 2.0 - 1.0j, dtype=np.complex64)
        grid = interpolate_grid(c, 0.0, n_symbols=14, prb_count=2,
                                dmrs_symbol_indices=(2,))
        assert grid.h.shape == (14, 24)
        assert np.allclose(grid.h, 2.0 - 1.0j, atol=1e-7)

    def test_linear_profile_exact_inside(self):
        # Estimates linear in subcarrier index are recovered exactly at
        # interior data subcarriers.
        prb = 2
        pilots = np.arange(0, 12 * prb, 2)
        vals = (0.25 * pilots + 1j * (1 - 0.1 * pilots)).astype(np.complex64)
        grid = interpolate_grid(vals[None, :], 0.0, n_symbols=4, prb_count=prb,
                                dmrs_symbol_indices=(1,))
        inner = np.arange(1, 12 * prb - 1)
        want = 0.25 * inner + 1j * (1 - 0.1 * inner)
        assert np.max(np.abs(grid.h[0, inner] - want)) <= 1e-5

    def test_matches_two_point_oracle(self):
        rng = np.random.default_rng(16)
        prb = 3
        f = PILOTS_PER_PRB * prb
        vals = random_complex64(rng, (1, f))
        grid = interpolate_grid(vals, 0.0, n_symbols=2, prb_count=prb,
                                dmrs_symbol_indices=(0,))
        pilots = np.arange(0, 12 * prb, 2)
        for k in range(12 * prb):
            left = np.searchsorted(pilots, k, side="right") - 1
            left = min(max(left, 0), f - 1)
            if pilots[left] == k or left == f - 1:
                want = vals[0, left]
            else:
                x0, x1 = pilots[left], pilots[left + 1]
                w = (k - x0) / (x1 - x0)
                want = (1 - w) * vals[0, left] + w * vals[0, left + 1]
            assert abs(grid.h[0, k] - want) <= 1e-7

    def test_time_replication_nearest(self):
        rows = np.stack([np.full(6, 1.0 + 0j), np.full(6, 2.0 + 0j)]).astype(np.complex64)
        grid = interpolate_grid(rows, 0.0, n_symbols=6, prb_count=1,
                                dmrs_symbol_indices=(1, 4))
        # Symbols 0-2 are nearest DMRS symbol 1; symbols 3-5 nearest DMRS 4.
        per_symbol = grid.h[:, 0]
        assert np.array_equal(per_symbol, np.array([1, 1, 1, 2, 2, 2], dtype=np.complex64))
