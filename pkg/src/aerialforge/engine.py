"""Serialized neural-network engines: the .aerb blob format and its executor.

A blob is a self-contained, bit-exact snapshot of a small network built
from {conv2d 3x3, dense, relu, add}. The byte layout (little-endian
throughout, see docs/formats.md):

    "AERB" | u32 version | u32 header_len | header (UTF-8 JSON)
          | weight section (float32) | u32 crc32

crc32 (IEEE polynomial, zlib.crc32) covers every byte before the
checksum field. The header lists layers in execution order together
with the input spec, the declared outputs and model metadata.

Inference is float32 with a fixed accumulation order so results are
bit-reproducible run to run: conv2d accumulates per output element over
(input channel, kernel row, kernel col), dense over ascending input
index, and the bias initializes the accumulator.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .tensors import SpecMismatch, TensorSpec, TensorValue

MAGIC = b"AERB"
VERSION = 1
GOLDEN_MAGIC = b"AERG"
GOLDEN_VERSION = 1

LAYER_KINDS = ("conv2d", "dense", "relu", "add")
_INPUT_REF = "input"


class EngineFormatError(ValueError):
    """Base for every structured blob/golden decoding failure."""


class BadMagic(EngineFormatError):
    pass


class UnsupportedVersion(EngineFormatError):
    pass


class CrcMismatch(EngineFormatError):
    pass


class MalformedHeader(EngineFormatError):
    pass


class WeightBoundsError(EngineFormatError):
    pass


class InvalidLayerGraph(ValueError):
    """Layer list handed to the serializer violates a structural invariant."""


@dataclass(frozen=True)
class LayerDescriptor:
    """One layer of the engine graph.

    ``inputs`` name producing layers, or "input" for the engine input.
    ``weight_offset``/``weight_len`` are byte offsets into the weight
    section; None means "assign during serialization".
    """

    name: str
    kind: str
    inputs: tuple[str, ...]
    hyperparams: Mapping[str, int] = field(default_factory=dict)
    weight_offset: int | None = None
    weight_len: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "hyperparams", dict(self.hyperparams))


@dataclass(frozen=True)
class OutputDecl:
    """A named engine output: which layer produces it and its spec."""

    spec: TensorSpec
    layer: str


@dataclass(frozen=True)
class ModelMeta:
    snr_bucket_db: int = 0
    prb_size: int = 0


@dataclass(frozen=True)
class Engine:
    """An immutable loaded blob: layer table, weight views, I/O specs."""

    layers: tuple[LayerDescriptor, ...]
    weights: Mapping[str, tuple[np.ndarray, np.ndarray]]
    input_spec: TensorSpec
    outputs: tuple[OutputDecl, ...]
    meta: ModelMeta

    @property
    def output_spec(self) -> TensorSpec:
        return self.outputs[0].spec

    def output_named(self, name: str) -> OutputDecl:
        for out in self.outputs:
            if out.spec.name == name:
                return out
        raise SpecMismatch(f"engine has no output named {name!r}")

    def parameter_count(self) -> int:
        return sum(k.size + b.size for k, b in self.weights.values())


# ---------------------------------------------------------------------------
# Structural validation shared by serializer and loader
# ---------------------------------------------------------------------------

def _expected_weight_floats(layer: LayerDescriptor) -> int:
    hp = layer.hyperparams
    if layer.kind == "conv2d":
        return hp["out_ch"] * hp["in_ch"] * hp["kh"] * hp["kw"] + hp["out_ch"]
    if layer.kind == "dense":
        return hp["out_dim"] * hp["in_dim"] + hp["out_dim"]
    return 0


def _check_layers(layers: Sequence[LayerDescriptor], outputs: Iterable[str], err: type) -> None:
    if not layers:
        raise err("engine needs at least one layer")
    seen: set[str] = set()
    for layer in layers:
        if not layer.name or layer.name == _INPUT_REF:
            raise err(f"invalid layer name {layer.name!r}")
        if layer.name in seen:
            raise err(f"duplicate layer name {layer.name!r}")
        if layer.kind not in LAYER_KINDS:
            raise err(f"layer {layer.name!r}: unknown kind {layer.kind!r}")
        want_inputs = 2 if layer.kind == "add" else 1
        if len(layer.inputs) != want_inputs:
            raise err(
                f"layer {layer.name!r} ({layer.kind}) needs {want_inputs} input(s), "
                f"got {len(layer.inputs)}"
            )
        for ref in layer.inputs:
            if ref != _INPUT_REF and ref not in seen:
                raise err(
                    f"layer {layer.name!r} consumes {ref!r} before it is produced "
                    "(layer list must be topologically ordered)"
                )
        if layer.kind == "conv2d":
            hp = layer.hyperparams
            for key in ("in_ch", "out_ch", "kh", "kw"):
                if key not in hp:
                    raise err(f"conv2d layer {layer.name!r} missing hyperparam {key!r}")
            if hp["kh"] != 3 or hp["kw"] != 3:
                raise err(f"layer {layer.name!r}: only 3x3 kernels are supported")
        if layer.kind == "dense":
            for key in ("in_dim", "out_dim"):
                if key not in layer.hyperparams:
                    raise err(f"dense layer {layer.name!r} missing hyperparam {key!r}")
        seen.add(layer.name)
    for out_layer in outputs:
        if out_layer not in seen:
            raise err(f"declared output layer {out_layer!r} does not exist")


def _check_weight_regions(layers: Sequence[LayerDescriptor], section_len: int, err: type) -> None:
    regions = []
    for layer in layers:
        off, length = layer.weight_offset, layer.weight_len
        if off is None or length is None:
            raise err(f"layer {layer.name!r} has no weight region assigned")
        expected = _expected_weight_floats(layer) * 4
        if length != expected:
            raise err(
                f"layer {layer.name!r}: weight region is {length} bytes, expected {expected}"
            )
        if off < 0 or off % 4 or off + length > section_len:
            raise err(
                f"layer {layer.name!r}: weight region [{off}, {off + length}) outside "
                f"the {section_len}-byte weight section"
            )
        if length:
            regions.append((off, off + length, layer.name))
    regions.sort()
    for (_, prev_end, prev_name), (start, _, name) in zip(regions, regions[1:]):
        if start < prev_end:
            raise err(f"weight regions of {prev_name!r} and {name!r} overlap")


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _spec_to_json(spec: TensorSpec) -> dict:
    return {"name": spec.name, "dtype": spec.dtype, "shape": list(spec.shape)}


def _spec_from_json(obj: dict, where: str) -> TensorSpec:
    try:
        return TensorSpec(obj["name"], obj["dtype"], tuple(obj["shape"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"bad tensor spec in {where}: {exc}") from exc


def serialize_engine(
    layers: Sequence[LayerDescriptor],
    weights: Mapping[str, tuple[np.ndarray, np.ndarray]],
    meta: ModelMeta = ModelMeta(),
    *,
    input_spec: TensorSpec,
    outputs: Sequence[OutputDecl],
) -> bytes:
    """Write a blob. ``weights`` maps conv2d/dense layer names to (kernel, bias).

    Weight regions are packed in layer order unless every weighted layer
    already carries explicit offsets (used by tests to exercise overlap
    detection). load_engine(serialize_engine(...)) is bit-exact.
    """
    if not outputs:
        raise InvalidLayerGraph("engine needs at least one declared output")
    _check_layers(layers, (o.layer for o in outputs), InvalidLayerGraph)

    blobs: dict[str, bytes] = {}
    for layer in layers:
        if layer.kind in ("conv2d", "dense"):
            if layer.name not in weights:
                raise InvalidLayerGraph(f"no weights supplied for layer {layer.name!r}")
            kernel, bias = weights[layer.name]
            kernel = np.ascontiguousarray(kernel, dtype=np.float32)
            bias = np.ascontiguousarray(bias, dtype=np.float32)
            hp = layer.hyperparams
            if layer.kind == "conv2d":
                want_k = (hp["out_ch"], hp["in_ch"], hp["kh"], hp["kw"])
                want_b = (hp["out_ch"],)
            else:
                want_k = (hp["out_dim"], hp["in_dim"])
                want_b = (hp["out_dim"],)
            if kernel.shape != want_k or bias.shape != want_b:
                raise InvalidLayerGraph(
                    f"layer {layer.name!r}: weight shapes {kernel.shape}/{bias.shape} "
                    f"do not match hyperparams (want {want_k}/{want_b})"
                )
            blobs[layer.name] = kernel.tobytes() + bias.tobytes()

    explicit = [l for l in layers if l.weight_offset is not None]
    if explicit and len(explicit) != len(layers):
        raise InvalidLayerGraph("either all layers or none may carry explicit weight offsets")

    placed: list[LayerDescriptor] = []
    if explicit:
        section_len = max(
            (l.weight_offset or 0) + (l.weight_len or 0) for l in layers
        )
        placed = list(layers)
    else:
        cursor = 0
        for layer in layers:
            length = len(blobs.get(layer.name, b""))
            placed.append(
                LayerDescriptor(
                    layer.name, layer.kind, layer.inputs, layer.hyperparams,
                    weight_offset=cursor, weight_len=length,
                )
            )
            cursor += length
        section_len = cursor
    _check_weight_regions(placed, section_len, InvalidLayerGraph)

    section = bytearray(section_len)
    for layer in placed:
        payload = blobs.get(layer.name, b"")
        assert layer.weight_offset is not None
        section[layer.weight_offset:layer.weight_offset + len(payload)] = payload

    header = {
        "layers": [
            {
                "name": l.name,
                "kind": l.kind,
                "inputs": list(l.inputs),
                "hyperparams": dict(l.hyperparams),
                "weight_offset": l.weight_offset,
                "weight_len": l.weight_len,
            }
            for l in placed
        ],
        "input": _spec_to_json(input_spec),
        "outputs": [dict(_spec_to_json(o.spec), layer=o.layer) for o in outputs],
        "meta": {"snr_bucket_db": meta.snr_bucket_db, "prb_size": meta.prb_size},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")

    body = bytearray()
    body += MAGIC
    body += struct.pack("<I", VERSION)
    body += struct.pack("<I", len(header_bytes))
    body += header_bytes
    body += bytes(section)
    body += struct.pack("<I", zlib.crc32(bytes(body)) & 0xFFFFFFFF)
    return bytes(body)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_engine(data: bytes) -> Engine:
    """Decode and validate a blob. Every failure is an EngineFormatError."""
    if len(data) < 16:
        raise MalformedHeader(f"blob is only {len(data)} bytes")
    if data[:4] != MAGIC:
        raise BadMagic(f"bad magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise UnsupportedVersion(f"blob version {version}, supported {VERSION}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CrcMismatch(f"crc32 {actual_crc:#010x} != stored {stored_crc:#010x}")

    (header_len,) = struct.unpack_from("<I", data, 8)
    header_end = 12 + header_len
    if header_end > len(data) - 4:
        raise MalformedHeader("header length runs past the end of the blob")
    try:
        header = json.loads(data[12:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise MalformedHeader("header root must be an object")
    unknown = set(header) - {"layers", "input", "outputs", "meta"}
    if unknown:
        raise MalformedHeader(f"unknown header keys {sorted(unknown)}")

    try:
        layers = tuple(
            LayerDescriptor(
                name=entry["name"],
                kind=entry["kind"],
                inputs=tuple(entry["inputs"]),
                hyperparams={k: int(v) for k, v in entry["hyperparams"].items()},
                weight_offset=int(entry["weight_offset"]),
                weight_len=int(entry["weight_len"]),
            )
            for entry in header["layers"]
        )
        input_spec = _spec_from_json(header["input"], "input")
        outputs = tuple(
            OutputDecl(spec=_spec_from_json(entry, "outputs"), layer=entry["layer"])
            for entry in header["outputs"]
        )
        meta_obj = header.get("meta", {})
        meta = ModelMeta(int(meta_obj.get("snr_bucket_db", 0)), int(meta_obj.get("prb_size", 0)))
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedHeader(f"header structure invalid: {exc}") from exc
    if not outputs:
        raise MalformedHeader("header declares no outputs")

    _check_layers(layers, (o.layer for o in outputs), MalformedHeader)

    section = np.frombuffer(data, dtype=np.uint8, count=len(data) - 4 - header_end,
                            offset=header_end)
    _check_weight_regions(layers, section.size, WeightBoundsError)

    weights: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for layer in layers:
        if layer.kind not in ("conv2d", "dense"):
            continue
        assert layer.weight_offset is not None and layer.weight_len is not None
        raw = section[layer.weight_offset:layer.weight_offset + layer.weight_len]
        flat = np.frombuffer(raw.tobytes(), dtype="<f4")
        hp = layer.hyperparams
        if layer.kind == "conv2d":
            k_size = hp["out_ch"] * hp["in_ch"] * hp["kh"] * hp["kw"]
            kernel = flat[:k_size].reshape(hp["out_ch"], hp["in_ch"], hp["kh"], hp["kw"])
            bias = flat[k_size:]
        else:
            k_size = hp["out_dim"] * hp["in_dim"]
            kernel = flat[:k_size].reshape(hp["out_dim"], hp["in_dim"])
            bias = flat[k_size:]
        kernel.flags.writeable = False
        bias.flags.writeable = False
        weights[layer.name] = (kernel, bias)

    return Engine(layers=layers, weights=weights, input_spec=input_spec,
                  outputs=outputs, meta=meta)


def load_engine_file(path) -> Engine:
    with open(path, "rb") as fh:
        return load_engine(fh.read())


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def _run_conv2d(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # Accumulation order per output element: input channel, kernel row,
    # kernel col; bias seeds the accumulator. Zero padding, stride 1.
    in_ch, h, w = x.shape
    out_ch = kernel.shape[0]
    padded = np.zeros((in_ch, h + 2, w + 2), dtype=np.float32)
    padded[:, 1:-1, 1:-1] = x
    acc = np.empty((out_ch, h, w), dtype=np.float32)
    acc[:] = bias[:, None, None]
    for ic in range(in_ch):
        plane = padded[ic]
        for kh in range(3):
            for kw in range(3):
                acc += kernel[:, ic, kh, kw][:, None, None] * plane[kh:kh + h, kw:kw + w]
    return acc


def _run_dense(x: np.ndarray, kernel: np.ndarray, bias: np.ndarray) -> np.ndarray:
    # Ascending input index, bias seeds the accumulator. Input is
    # flattened row-major regardless of its declared shape.
    flat = x.reshape(-1)
    acc = bias.astype(np.float32, copy=True)
    for i in range(flat.size):
        acc += kernel[:, i] * flat[i]
    return acc


def infer_all(engine: Engine, value: TensorValue) -> dict[str, TensorValue]:
    """Evaluate every layer once; return all declared outputs by name."""
    if not value.spec.compatible_with(engine.input_spec):
        raise SpecMismatch(
            f"engine input expects {engine.input_spec.dtype}{engine.input_spec.shape}, "
            f"got {value.spec.dtype}{value.spec.shape}"
        )
    if value.spec.dtype != "float32":
        raise SpecMismatch("engines run on float32 planar tensors")

    activations: dict[str, np.ndarray] = {_INPUT_REF: value.data}
    for layer in engine.layers:
        srcs = [activations[ref] for ref in layer.inputs]
        if layer.kind == "conv2d":
            kernel, bias = engine.weights[layer.name]
            out = _run_conv2d(srcs[0], kernel, bias)
        elif layer.kind == "dense":
            kernel, bias = engine.weights[layer.name]
            out = _run_dense(srcs[0], kernel, bias)
        elif layer.kind == "relu":
            out = np.maximum(srcs[0], np.float32(0.0))
        else:  # add
            if srcs[0].shape != srcs[1].shape:
                raise SpecMismatch(
                    f"add layer {layer.name!r}: operand shapes {srcs[0].shape} vs {srcs[1].shape}"
                )
            out = srcs[0] + srcs[1]
        activations[layer.name] = out

    results: dict[str, TensorValue] = {}
    for decl in engine.outputs:
        arr = activations[decl.layer]
        if arr.size != decl.spec.n_elements:
            raise SpecMismatch(
                f"output {decl.spec.name!r}: layer produced {arr.size} elements, "
                f"spec declares {decl.spec.n_elements}"
            )
        results[decl.spec.name] = TensorValue(decl.spec, arr.reshape(decl.spec.shape))
    return results


def infer(engine: Engine, value: TensorValue) -> TensorValue:
    """Evaluate the engine and return its primary (first declared) output."""
    return infer_all(engine, value)[engine.outputs[0].spec.name]


# ---------------------------------------------------------------------------
# Golden vectors (.aergv)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GoldenVectors:
    """(input, expected outputs) pairs with the parity tolerance."""

    vectors: tuple[tuple[TensorValue, tuple[TensorValue, ...]], ...]
    rtol: float = 1e-4
    atol: float = 1e-5


@dataclass(frozen=True)
class GoldenVectorReport:
    per_vector: tuple[dict, ...]
    passed: bool
    vacuous: bool

    def summary(self) -> str:
        lines = []
        for i, entry in enumerate(self.per_vector):
            status = "pass" if entry["passed"] else "FAIL"
            lines.append(
                f"vector {i:3d}: max_abs={entry['max_abs']:.3e} "
                f"max_rel={entry['max_rel']:.3e} {status}"
            )
        verdict = "PASS" if self.passed else "FAIL"
        if self.vacuous:
            verdict += " (vacuous: 0 vectors)"
        lines.append(f"overall: {verdict}")
        return "\n".join(lines)


def verify_golden(engine: Engine, golden: GoldenVectors) -> GoldenVectorReport:
    """Run every golden input and compare against expectations.

    A vector passes when elementwise |got - want| <= atol + rtol*|want|
    on every declared output. An empty list passes and is flagged vacuous.
    """
    per_vector = []
    all_pass = True
    for input_value, expected in golden.vectors:
        got = infer_all(engine, input_value)
        if len(expected) != len(engine.outputs):
            raise SpecMismatch(
                f"golden vector carries {len(expected)} outputs, engine declares "
                f"{len(engine.outputs)}"
            )
        max_abs = 0.0
        max_rel = 0.0
        ok = True
        for decl, want in zip(engine.outputs, expected):
            if not want.spec.compatible_with(decl.spec):
                raise SpecMismatch(
                    f"golden output spec {want.spec.dtype}{want.spec.shape} does not match "
                    f"engine output {decl.spec.dtype}{decl.spec.shape}"
                )
            a = got[decl.spec.name].data.astype(np.float64)
            b = want.data.astype(np.float64)
            diff = np.abs(a - b)
            max_abs = max(max_abs, float(diff.max(initial=0.0)))
            denom = np.maximum(np.abs(b), 1e-30)
            max_rel = max(max_rel, float((diff / denom).max(initial=0.0)))
            if not np.all(diff <= golden.atol + golden.rtol * np.abs(b)):
                ok = False
        per_vector.append({"max_abs": max_abs, "max_rel": max_rel, "passed": ok})
        all_pass &= ok
    return GoldenVectorReport(
        per_vector=tuple(per_vector),
        passed=all_pass,
        vacuous=not golden.vectors,
    )


def write_golden_vectors(golden: GoldenVectors) -> bytes:
    """Encode goldens as .aergv bytes (see docs/formats.md)."""
    body = bytearray()
    body += GOLDEN_MAGIC
    body += struct.pack("<I", GOLDEN_VERSION)
    body += struct.pack("<I", len(golden.vectors))
    for input_value, expected in golden.vectors:
        payloads = [input_value.data, *[t.data for t in expected]]
        body += struct.pack("<II", 0, len(payloads))
        for arr in payloads:
            flat = np.ascontiguousarray(arr, dtype="<f4").reshape(-1)
            body += struct.pack("<I", flat.size)
            body += flat.tobytes()
    return bytes(body)


def read_golden_vectors(data: bytes, engine: Engine,
                        rtol: float = 1e-4, atol: float = 1e-5) -> GoldenVectors:
    """Decode .aergv bytes against an engine's declared I/O specs."""
    if len(data) < 12:
        raise MalformedHeader("golden file truncated")
    if data[:4] != GOLDEN_MAGIC:
        raise BadMagic(f"bad golden magic {data[:4]!r}")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != GOLDEN_VERSION:
        raise UnsupportedVersion(f"golden version {version}, supported {GOLDEN_VERSION}")
    (count,) = struct.unpack_from("<I", data, 8)
    offset = 12
    specs = [engine.input_spec, *[o.spec for o in engine.outputs]]
    vectors = []
    for _ in range(count):
        if offset + 8 > len(data):
            raise MalformedHeader("golden record truncated")
        spec_id, n_payloads = struct.unpack_from("<II", data, offset)
        offset += 8
        if spec_id != 0:
            raise MalformedHeader(f"unknown golden input spec id {spec_id}")
        if n_payloads != len(specs):
            raise MalformedHeader(
                f"golden record carries {n_payloads} payloads, engine expects {len(specs)}"
            )
        values = []
        for spec in specs:
            if offset + 4 > len(data):
                raise MalformedHeader("golden payload truncated")
            (n_floats,) = struct.unpack_from("<I", data, offset)
            offset += 4
            if n_floats != spec.n_elements:
                raise MalformedHeader(
                    f"golden payload has {n_floats} floats, spec {spec.name!r} "
                    f"declares {spec.n_elements}"
                )
            end = offset + 4 * n_floats
            if end > len(data):
                raise MalformedHeader("golden payload truncated")
            arr = np.frombuffer(data, dtype="<f4", count=n_floats, offset=offset)
            values.append(TensorValue(spec, arr.reshape(spec.shape)))
            offset = end
        vectors.append((values[0], tuple(values[1:])))
    if offset != len(data):
        raise MalformedHeader(f"{len(data) - offset} trailing bytes after golden records")
    return GoldenVectors(vectors=tuple(vectors), rtol=rtol, atol=atol)


# ---------------------------------------------------------------------------
# Reference denoiser topology (shared with the trainer via the format doc)
# ---------------------------------------------------------------------------

def denoiser_layers(t: int, f: int, width: int = 32) -> tuple[LayerDescriptor, ...]:
    """Layer table of the channel-denoiser family for a (2, t, f) input.

    Main path: input conv 2->width, two residual blocks (conv/relu/conv
    + skip add), output conv width->2 with no activation. SNR path: one
    dense layer over the flattened input.
    """
    def conv(name, inp, cin, cout):
        return LayerDescriptor(name, "conv2d", (inp,),
                               {"in_ch": cin, "out_ch": cout, "kh": 3, "kw": 3})

    layers = [
        conv("conv_in", "input", 2, width),
        LayerDescriptor("relu_in", "relu", ("conv_in",)),
        conv("res1_conv1", "relu_in", width, width),
        LayerDescriptor("res1_relu", "relu", ("res1_conv1",)),
        conv("res1_conv2", "res1_relu", width, width),
        LayerDescriptor("res1_add", "add", ("res1_conv2", "relu_in")),
        conv("res2_conv1", "res1_add", width, width),
        LayerDescriptor("res2_relu", "relu", ("res2_conv1",)),
        conv("res2_conv2", "res2_relu", width, width),
        LayerDescriptor("res2_add", "add", ("res2_conv2", "res1_add")),
        conv("conv_out", "res2_add", width, 2),
        LayerDescriptor("snr_head", "dense", ("input",),
                        {"in_dim": 2 * t * f, "out_dim": 1}),
    ]
    return tuple(layers)


def denoiser_io(t: int, f: int) -> tuple[TensorSpec, tuple[OutputDecl, ...]]:
    input_spec = TensorSpec("ls_planar", "float32", (2, t, f))
    outputs = (
        OutputDecl(TensorSpec("denoised", "float32", (2, t, f)), "conv_out"),
        OutputDecl(TensorSpec("snr_db", "float32", (1,)), "snr_head"),
    )
    return input_spec, outputs


def identity_denoiser_weights(layers: Sequence[LayerDescriptor],
                              snr_bias_db: float = 0.0) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Weights that make the denoiser family the identity map.

    The input conv splits each data channel into positive and negative
    parts (center taps +1 and -1) so the following relu is lossless;
    residual convs are zero, reducing each block to its skip; the output
    conv recombines relu(x) - relu(-x) == x with center taps. Needs
    width >= 4. The SNR head is constant at ``snr_bias_db``.
    """
    weights: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for layer in layers:
        hp = layer.hyperparams
        if layer.kind == "conv2d":
            kernel = np.zeros((hp["out_ch"], hp["in_ch"], 3, 3), dtype=np.float32)
            bias = np.zeros(hp["out_ch"], dtype=np.float32)
            if layer.name == "conv_in":
                if hp["out_ch"] < 4:
                    raise InvalidLayerGraph("identity weights need width >= 4")
                kernel[0, 0, 1, 1] = 1.0
                kernel[1, 1, 1, 1] = 1.0
                kernel[2, 0, 1, 1] = -1.0
                kernel[3, 1, 1, 1] = -1.0
            elif layer.name == "conv_out":
                kernel[0, 0, 1, 1] = 1.0
                kernel[0, 2, 1, 1] = -1.0
                kernel[1, 1, 1, 1] = 1.0
                kernel[1, 3, 1, 1] = -1.0
            weights[layer.name] = (kernel, bias)
        elif layer.kind == "dense":
            kernel = np.zeros((hp["out_dim"], hp["in_dim"]), dtype=np.float32)
            bias = np.full(hp["out_dim"], snr_bias_db, dtype=np.float32)
            weights[layer.name] = (kernel, bias)
    return weights
