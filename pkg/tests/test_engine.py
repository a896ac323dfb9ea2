"""Engine blob format, loader and executor."""

import numpy as np
import pytest

from aerialforge import engine as eng
from aerialforge.tensors import SpecMismatch, TensorSpec, TensorValue

from conftest import make_denoiser_engine_bytes


def conv_oracle(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Brute-force 3x3 same-padding convolution, float64, per output element."""
    in_ch, h, w = x.shape
    out_ch = kernel.shape[0]
    out = np.zeros((out_ch, h, w), dtype=np.float64)
    xf = x.astype(np.float64)
    kf = kernel.astype(np.float64)
    for oc in range(out_ch):
        for r in range(h):
            for c in range(w):
                acc = float(bias[oc])
                for ic in range(in_ch):
                    for kh in range(3):
                        for kw in range(3):
                            rr, cc = r + kh - 1, c + kw - 1
                            if 0 <= rr < h and 0 <= cc < w:
                                acc += kf[oc, ic, kh, kw] * xf[ic, rr, cc]
                out[oc, r, c] = acc
    return out


def _single_conv_engine(in_ch, out_ch, h, w, kernel, bias):
    layers = (eng.LayerDescriptor("conv", "conv2d", ("input",),
                                  {"in_ch": in_ch, "out_ch": out_ch, "kh": 3, "kw": 3}),)
    input_spec = TensorSpec("x", "float32", (in_ch, h, w))
    outputs = (eng.OutputDecl(TensorSpec("y", "float32", (out_ch, h, w)), "conv"),)
    blob = eng.serialize_engine(layers, {"conv": (kernel, bias)},
                                input_spec=input_spec, outputs=outputs)
    return eng.load_engine(blob)


class TestFormat:
    def test_one_layer_relu_roundtrip(self):
        layers = (eng.LayerDescriptor("act", "relu", ("input",)),)
        spec = TensorSpec("x", "float32", (3,))
        blob = eng.serialize_engine(layers, {}, input_spec=spec,
                                    outputs=(eng.OutputDecl(spec.renamed("y"), "act"),))
        engine = eng.load_engine(blob)
        assert len(engine.layers) == 1
        assert engine.parameter_count() == 0

    def test_roundtrip_weights_bit_exact(self):
        blob = make_denoiser_engine_bytes(1, 12, width=8)
        engine = eng.load_engine(blob)
        # Re-serialize from the loaded tables and compare bytes.
        blob2 = eng.serialize_engine(
            tuple(eng.LayerDescriptor(l.name, l.kind, l.inputs, l.hyperparams)
                  for l in engine.layers),
            engine.weights, engine.meta,
            input_spec=engine.input_spec, outputs=engine.outputs)
        assert blob2 == blob

    def test_flip_weight_byte_crc_mismatch(self):
        blob = bytearray(make_denoiser_engine_bytes(1, 6, width=4))
        # Flip one byte inside the weight section (well past the header).
        idx = len(blob) - 10
        blob[idx] ^= 0xFF
        with pytest.raises(eng.CrcMismatch):
            eng.load_engine(bytes(blob))

    def test_bad_magic(self):
        blob = bytearray(make_denoiser_engine_bytes(1, 6, width=4))
        blob[0] = ord("X")
        with pytest.raises(eng.BadMagic):
            eng.load_engine(bytes(blob))

    def test_meta_roundtrip(self):
        blob = make_denoiser_engine_bytes(1, 24, width=4, snr_bucket_db=0, prb_size=4)
        engine = eng.load_engine(blob)
        assert (engine.meta.snr_bucket_db, engine.meta.prb_size) == (0, 4)

    def test_empty_layer_list_rejected(self):
        spec = TensorSpec("x", "float32", (1,))
        with pytest.raises(eng.InvalidLayerGraph):
            eng.serialize_engine((), {}, input_spec=spec,
                                 outputs=(eng.OutputDecl(spec, "nope"),))

    def test_overlapping_weight_regions_rejected(self):
        k = np.zeros((1, 1, 3, 3), dtype=np.float32)
        b = np.zeros(1, dtype=np.float32)
        layers = (
            eng.LayerDescriptor("c1", "conv2d", ("input",),
                                {"in_ch": 1, "out_ch": 1, "kh": 3, "kw": 3},
                                weight_offset=0, weight_len=40),
            eng.LayerDescriptor("c2", "conv2d", ("c1",),
                                {"in_ch": 1, "out_ch": 1, "kh": 3, "kw": 3},
                                weight_offset=16, weight_len=40),
        )
        spec = TensorSpec("x", "float32", (1, 2, 2))
        with pytest.raises(eng.InvalidLayerGraph, match="overlap"):
            eng.serialize_engine(layers, {"c1": (k, b), "c2": (k, b)},
                                 input_spec=spec,
                                 outputs=(eng.OutputDecl(spec.renamed("y"), "c2"),))

    def test_add_needs_two_inputs(self):
        layers = (eng.LayerDescriptor("s", "add", ("input",)),)
        spec = TensorSpec("x", "float32", (1,))
        with pytest.raises(eng.InvalidLayerGraph, match="2 input"):
            eng.serialize_engine(layers, {}, input_spec=spec,
                                 outputs=(eng.OutputDecl(spec, "s"),))

    def test_non_topological_order_rejected(self):
        layers = (
            eng.LayerDescriptor("a", "relu", ("b",)),
            eng.LayerDescriptor("b", "relu", ("input",)),
        )
        spec = TensorSpec("x", "float32", (1,))
        with pytest.raises(eng.InvalidLayerGraph, match="topologically"):
            eng.serialize_engine(layers, {}, input_spec=spec,
                                 outputs=(eng.OutputDecl(spec, "a"),))

    def test_fuzzed_blobs_fail_structurally(self):
        # Single-byte corruptions must yield structured errors, never crashes.
        base = make_denoiser_engine_bytes(1, 6, width=4)
        rng = np.random.default_rng(99)
        for _ in range(200):
            blob = bytearray(base)
            idx = int(rng.integers(0, len(blob)))
            old = blob[idx]
            blob[idx] = int(rng.integers(0, 256))
            if blob[idx] == old:
                blob[idx] ^= 0x01
            with pytest.raises(eng.EngineFormatError):
                eng.load_engine(bytes(blob))


class TestExecutor:
    def test_identity_kernel_passthrough(self):
        # Center tap 1 with identity channel mixing reproduces the input.
        rng = np.random.default_rng(0)
        in_ch = out_ch = 3
        kernel = np.zeros((out_ch, in_ch, 3, 3), dtype=np.float32)
        for c in range(in_ch):
            kernel[c, c, 1, 1] = 1.0
        bias = np.zeros(out_ch, dtype=np.float32)
        engine = _single_conv_engine(in_ch, out_ch, 4, 5, kernel, bias)
        x = rng.standard_normal((in_ch, 4, 5)).astype(np.float32)
        y = eng.infer(engine, TensorValue.wrap("x", x))
        assert np.array_equal(y.data, x)

    def test_zero_weights_constant_bias(self):
        kernel = np.zeros((2, 3, 3, 3), dtype=np.float32)
        bias = np.array([0.5, -1.25], dtype=np.float32)
        engine = _single_conv_engine(3, 2, 3, 3, kernel, bias)
        x = np.random.default_rng(1).standard_normal((3, 3, 3)).astype(np.float32)
        y = eng.infer(engine, TensorValue.wrap("x", x))
        assert np.all(y.data[0] == np.float32(0.5))
        assert np.all(y.data[1] == np.float32(-1.25))

    def test_conv_stack_matches_bruteforce_oracle(self):
        rng = np.random.default_rng(42)
        k1 = rng.standard_normal((8, 2, 3, 3)).astype(np.float32) * 0.3
        b1 = rng.standard_normal(8).astype(np.float32) * 0.1
        k2 = rng.standard_normal((2, 8, 3, 3)).astype(np.float32) * 0.3
        b2 = rng.standard_normal(2).astype(np.float32) * 0.1
        layers = (
            eng.LayerDescriptor("c1", "conv2d", ("input",),
                                {"in_ch": 2, "out_ch": 8, "kh": 3, "kw": 3}),
            eng.LayerDescriptor("c2", "conv2d", ("c1",),
                                {"in_ch": 8, "out_ch": 2, "kh": 3, "kw": 3}),
        )
        input_spec = TensorSpec("x", "float32", (2, 4, 6))
        outputs = (eng.OutputDecl(TensorSpec("y", "float32", (2, 4, 6)), "c2"),)
        engine = eng.load_engine(eng.serialize_engine(
            layers, {"c1": (k1, b1), "c2": (k2, b2)},
            input_spec=input_spec, outputs=outputs))
        x = rng.standard_normal((2, 4, 6)).astype(np.float32)
        got = eng.infer(engine, TensorValue.wrap("x", x)).data
        want = conv_oracle(conv_oracle(x, k1, b1).astype(np.float32), k2, b2)
        assert np.max(np.abs(got - want)) <= 1e-5

    def test_dense_linearity_without_bias(self):
        rng = np.random.default_rng(17)
        w = rng.standard_normal((3, 10)).astype(np.float32)
        b = np.zeros(3, dtype=np.float32)
        layers = (eng.LayerDescriptor("d", "dense", ("input",),
                                      {"in_dim": 10, "out_dim": 3}),)
        input_spec = TensorSpec("x", "float32", (10,))
        outputs = (eng.OutputDecl(TensorSpec("y", "float32", (3,)), "d"),)
        engine = eng.load_engine(eng.serialize_engine(
            layers, {"d": (w, b)}, input_spec=input_spec, outputs=outputs))
        x = rng.standard_normal(10).astype(np.float32)
        base = eng.infer(engine, TensorValue.wrap("x", x)).data
        for a in (-4.0, -0.5, 2.0, 4.0):
            scaled = eng.infer(engine, TensorValue.wrap("x", (a * x).astype(np.float32))).data
            assert np.max(np.abs(scaled - a * base)) <= 1e-5 * max(1.0, abs(a))

    def test_residual_block_with_zero_convs_is_identity(self):
        rng = np.random.default_rng(23)
        blob = make_denoiser_engine_bytes(2, 12, width=4)
        engine = eng.load_engine(blob)
        x = rng.standard_normal((2, 2, 12)).astype(np.float32)
        y = eng.infer(engine, TensorValue.wrap("x", x))
        assert np.array_equal(y.data, x)

    def test_determinism_across_runs(self):
        rng = np.random.default_rng(31)
        weights = {}
        layers = eng.denoiser_layers(1, 12, width=8)
        for layer in layers:
            hp = layer.hyperparams
            if layer.kind == "conv2d":
                weights[layer.name] = (
                    rng.standard_normal((hp["out_ch"], hp["in_ch"], 3, 3)).astype(np.float32),
                    rng.standard_normal(hp["out_ch"]).astype(np.float32))
            elif layer.kind == "dense":
                weights[layer.name] = (
                    rng.standard_normal((hp["out_dim"], hp["in_dim"])).astype(np.float32),
                    rng.standard_normal(hp["out_dim"]).astype(np.float32))
        input_spec, outputs = eng.denoiser_io(1, 12)
        engine = eng.load_engine(eng.serialize_engine(
            layers, weights, input_spec=input_spec, outputs=outputs))
        x = TensorValue.wrap("x", rng.standard_normal((2, 1, 12)).astype(np.float32))
        first = eng.infer_all(engine, x)
        second = eng.infer_all(engine, x)
        for name in first:
            assert np.array_equal(first[name].data, second[name].data)

    def test_spec_mismatch_on_wrong_input(self):
        engine = eng.load_engine(make_denoiser_engine_bytes(1, 6, width=4))
        with pytest.raises(SpecMismatch):
            eng.infer(engine, TensorValue.wrap("x", np.zeros((2, 1, 12), dtype=np.float32)))

    def test_snr_head_reads_bias(self):
        engine = eng.load_engine(make_denoiser_engine_bytes(1, 6, width=4, snr_bias_db=5.0))
        x = TensorValue.wrap("x", np.random.default_rng(3).standard_normal((2, 1, 6)).astype(np.float32))
        out = eng.infer_all(engine, x)
        assert out["snr_db"].data[0] == np.float32(5.0)


class TestGoldenVectors:
    def _engine_and_goldens(self, n_vectors=4, perturb=None):
        engine = eng.load_engine(make_denoiser_engine_bytes(1, 12, width=4))
        rng = np.random.default_rng(77)
        vectors = []
        for i in range(n_vectors):
            x = TensorValue(engine.input_spec,
                            rng.standard_normal((2, 1, 12)).astype(np.float32))
            outs = eng.infer_all(engine, x)
            expected = tuple(outs[o.spec.name] for o in engine.outputs)
            if perturb is not None and i == perturb:
                bad = expected[0].data.copy()
                bad[0, 0, 0] += 1e-2
                expected = (TensorValue(expected[0].spec, bad),) + expected[1:]
            vectors.append((x, expected))
        return engine, eng.GoldenVectors(tuple(vectors))

    def test_passing_goldens(self):
        engine, golden = self._engine_and_goldens()
        report = eng.verify_golden(engine, golden)
        assert report.passed and not report.vacuous
        assert all(v["passed"] for v in report.per_vector)

    def test_perturbed_vector_fails(self):
        engine, golden = self._engine_and_goldens(perturb=2)
        report = eng.verify_golden(engine, golden)
        assert not report.passed
        assert [v["passed"] for v in report.per_vector] == [True, True, False, True]

    def test_empty_goldens_vacuous_pass(self):
        engine, _ = self._engine_and_goldens()
        report = eng.verify_golden(engine, eng.GoldenVectors(()))
        assert report.passed and report.vacuous
        assert "vacuous" in report.summary()

    def test_golden_file_roundtrip(self):
        engine, golden = self._engine_and_goldens()
        data = eng.write_golden_vectors(golden)
        back = eng.read_golden_vectors(data, engine)
        assert len(back.vectors) == len(golden.vectors)
        report = eng.verify_golden(engine, back)
        assert report.passed

    def test_golden_bad_magic(self):
        engine, golden = self._engine_and_goldens()
        data = bytearray(eng.write_golden_vectors(golden))
        data[0] = 0
        with pytest.raises(eng.BadMagic):
            eng.read_golden_vectors(bytes(data), engine)


class TestReferenceArchitecture:
    def test_main_path_parameter_count(self):
        # 2->32 conv + 4x 32->32 convs + 32->2 conv = 38,178 weights+biases.
        layers = eng.denoiser_layers(1, 6, width=32)
        main = [l for l in layers if l.kind == "conv2d"]
        count = sum(eng._expected_weight_floats(l) for l in main)
        assert count == 38178

    def test_architecture_shape(self):
        layers = eng.denoiser_layers(1, 6)
        kinds = [l.kind for l in layers]
        assert kinds.count("conv2d") == 6
        assert kinds.count("add") == 2
        assert kinds.count("dense") == 1
        assert kinds.count("relu") == 3
