"""Built-in node kinds for the graph runtime.

Estimator nodes share one port contract so the manifest can swap them
freely: inputs rx_pilots/pilot_symbols (complex64, (t_dmrs, f_dmrs)),
outputs h_est (same shape) and noise_var (float32, (1,)). The perfect
oracle additionally consumes h_true. Interpolation and equalization are
separate kinds, and any engine blob can be mounted as a node.
"""

from __future__ import annotations

import numpy as np

from . import chanest, engine as eng
from .graph import BlobLoadError, BuildContext, NodeDescriptor, NodeRegistry
from .tdl import TdlProfile
from .tensors import SpecMismatch, TensorValue


def _noise_var_value(noise_var: float) -> TensorValue:
    return TensorValue.wrap("noise_var", np.array([noise_var], dtype=np.float32))


def _observation(inputs: dict[str, TensorValue]) -> chanest.DmrsObservation:
    rx = inputs["rx_pilots"].data
    pilots = inputs["pilot_symbols"].data
    f_dmrs = rx.shape[1]
    prb_count = f_dmrs // chanest.PILOTS_PER_PRB
    return chanest.DmrsObservation(
        rx_pilots=rx,
        pilot_symbols=pilots,
        prb_count=prb_count,
        symbol_indices=tuple(range(rx.shape[0])),
        subcarrier_indices=np.arange(0, 12 * prb_count, chanest.PILOT_SPACING_SC),
    )


class IdentityNode:
    def __init__(self, descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        self.descriptor = descriptor

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        out = {}
        for in_spec, out_spec in zip(self.descriptor.inputs, self.descriptor.outputs):
            out[out_spec.name] = inputs[in_spec.name].renamed(out_spec.name)
        return out


class LsEstimatorNode:
    def __init__(self, _descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        pass

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        ls = chanest.ls_estimate(_observation(inputs))
        return {
            "h_est": TensorValue.wrap("h_est", ls.h_ls),
            "noise_var": _noise_var_value(ls.noise_var),
        }


class MmseEstimatorNode:
    """Wiener estimator with a configurable assumed PDP.

    params: pdp = "uniform" (default, max delay pdp_max_delay_s=1.2e-6)
    or a TDL profile name with delay_spread_s; scs_hz and
    pilot_spacing_sc describe the pilot lattice.
    """

    def __init__(self, descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        params = descriptor.params
        pdp_kind = str(params.get("pdp", "uniform"))
        if pdp_kind == "uniform":
            max_delay = float(params.get("pdp_max_delay_s", 1.2e-6))
            self.pdp = chanest.PdpModel.uniform(max_delay)
        else:
            profile = TdlProfile(pdp_kind, float(params.get("delay_spread_s", 300e-9)))
            self.pdp = chanest.PdpModel.from_profile(profile)
        self.scs_hz = float(params.get("scs_hz", 30e3))
        self.pilot_spacing_sc = int(params.get("pilot_spacing_sc", chanest.PILOT_SPACING_SC))

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        ls = chanest.ls_estimate(_observation(inputs))
        denoised = chanest.mmse_estimate(
            ls, self.pdp, subcarrier_spacing_hz=self.scs_hz,
            pilot_spacing_sc=self.pilot_spacing_sc)
        return {
            "h_est": TensorValue.wrap("h_est", denoised),
            "noise_var": _noise_var_value(ls.noise_var),
        }


class CnnEstimatorNode:
    """Engine-bank estimator; the bank directory comes from estimator_config."""

    def __init__(self, descriptor: NodeDescriptor, ctx: BuildContext) -> None:
        model_dir = descriptor.params.get("model_dir")
        if model_dir is None and ctx.estimator_config is not None:
            model_dir = ctx.estimator_config.model_dir
        if not model_dir:
            raise BlobLoadError("cnn estimator needs estimator_config.model_dir")
        try:
            self.bank = chanest.ModelBank.load(ctx.base_dir / str(model_dir))
        except chanest.BankError as exc:
            raise BlobLoadError(str(exc)) from exc

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        ls = chanest.ls_estimate(_observation(inputs))
        denoised, _selection = chanest.cnn_estimate(ls, self.bank)
        return {
            "h_est": TensorValue.wrap("h_est", denoised),
            "noise_var": _noise_var_value(ls.noise_var),
        }


class PerfectEstimatorNode:
    """Oracle: returns the true channel at the DMRS REs (extra h_true input)."""

    def __init__(self, _descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        pass

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        ls = chanest.ls_estimate(_observation(inputs))
        return {
            "h_est": inputs["h_true"].renamed("h_est"),
            "noise_var": _noise_var_value(ls.noise_var),
        }


class InterpolateNode:
    """DMRS-grid estimates to the full (n_symbols, 12*prb) grid."""

    def __init__(self, descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        params = descriptor.params
        self.n_symbols = int(params["n_symbols"])
        self.prb_count = int(params["n_prb"])
        raw = str(params.get("dmrs_symbols", "2"))
        self.dmrs_symbol_indices = tuple(int(tok) for tok in raw.split(",") if tok.strip())

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        noise_var = float(inputs["noise_var"].data[0]) if "noise_var" in inputs else 0.0
        grid = chanest.interpolate_grid(
            inputs["h_in"].data, noise_var,
            n_symbols=self.n_symbols, prb_count=self.prb_count,
            dmrs_symbol_indices=self.dmrs_symbol_indices)
        return {"h_grid": TensorValue.wrap("h_grid", grid.h)}


class MmseEqualizerNode:
    """Per-RE equalizer x_hat = conj(h) y / (|h|^2 + sigma^2)."""

    def __init__(self, _descriptor: NodeDescriptor, _ctx: BuildContext) -> None:
        pass

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        y = inputs["y"].data
        h = inputs["h"].data
        noise_var = float(inputs["noise_var"].data[0])
        gain = np.conj(h) / (np.abs(h) ** 2 + np.float32(noise_var))
        return {"x_eq": TensorValue.wrap("x_eq", (gain * y).astype(np.complex64))}


class EngineBlobNode:
    """A serialized engine mounted as a graph node (params: path)."""

    def __init__(self, descriptor: NodeDescriptor, ctx: BuildContext) -> None:
        path = descriptor.params.get("path")
        if not path:
            raise BlobLoadError(f"node {descriptor.name!r} needs a 'path' param")
        try:
            self.engine = eng.load_engine_file(ctx.base_dir / str(path))
        except (OSError, eng.EngineFormatError) as exc:
            raise BlobLoadError(f"blob {path!r} failed to load: {exc}") from exc
        if descriptor.inputs:
            declared = descriptor.inputs[0]
            if not declared.compatible_with(self.engine.input_spec):
                raise BlobLoadError(
                    f"node {descriptor.name!r}: declared input "
                    f"{declared.dtype}{declared.shape} does not match engine "
                    f"{self.engine.input_spec.dtype}{self.engine.input_spec.shape}")
        self.descriptor = descriptor

    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]:
        in_name = self.descriptor.inputs[0].name if self.descriptor.inputs else "x"
        value = inputs[in_name]
        results = eng.infer_all(self.engine, TensorValue(self.engine.input_spec, value.data))
        out: dict[str, TensorValue] = {}
        for spec in self.descriptor.outputs:
            if spec.name not in results:
                raise SpecMismatch(f"engine does not produce output {spec.name!r}")
            out[spec.name] = results[spec.name]
        return out or {k: v for k, v in results.items()}


def default_registry() -> NodeRegistry:
    """A fresh registry with every built-in kind registered."""
    registry = NodeRegistry()
    registry.register("identity", IdentityNode)
    registry.register("chanest.ls", LsEstimatorNode)
    registry.register("chanest.mmse", MmseEstimatorNode)
    registry.register("chanest.cnn", CnnEstimatorNode)
    registry.register("chanest.perfect", PerfectEstimatorNode)
    registry.register("chanest.interp", InterpolateNode)
    registry.register("eq.mmse", MmseEqualizerNode)
    registry.register("engine.blob", EngineBlobNode)
    return registry
