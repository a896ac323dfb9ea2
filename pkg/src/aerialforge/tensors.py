"""Typed, shaped numeric payloads exchanged between graph nodes.

Every value crossing a node boundary is a ``TensorValue``: a contiguous
numpy buffer plus the ``TensorSpec`` it was declared with. Boundary
adapters (complex<->planar packing, reshape) live here too, so the graph
runtime and the estimators share one definition of those transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

#: dtype tag -> numpy dtype. "complex64" is stored as interleaved
#: (real, imag) float32 pairs, i.e. numpy's native complex64 layout.
DTYPES = {
    "complex64": np.dtype(np.complex64),
    "float32": np.dtype(np.float32),
}

ROW_MAJOR = "row-major"


class SpecMismatch(ValueError):
    """A tensor does not satisfy the spec expected at a port boundary."""


@dataclass(frozen=True)
class TensorSpec:
    """Declared name, dtype, shape and layout of one port's tensor."""

    name: str
    dtype: str
    shape: tuple[int, ...]
    layout: str = ROW_MAJOR

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("tensor spec needs a non-empty name")
        if self.dtype not in DTYPES:
            raise ValueError(f"unsupported dtype {self.dtype!r} (expected one of {sorted(DTYPES)})")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if not self.shape:
            raise ValueError(f"tensor spec {self.name!r} has an empty shape")
        if any(d < 1 for d in self.shape):
            raise ValueError(f"tensor spec {self.name!r} has non-positive dimensions: {self.shape}")
        if self.layout != ROW_MAJOR:
            raise ValueError(f"unsupported layout {self.layout!r}")

    @property
    def n_elements(self) -> int:
        return math.prod(self.shape)

    @property
    def np_dtype(self) -> np.dtype:
        return DTYPES[self.dtype]

    def compatible_with(self, other: "TensorSpec") -> bool:
        """Value compatibility: same dtype and shape. Names are port-local."""
        return self.dtype == other.dtype and self.shape == other.shape

    def renamed(self, name: str) -> "TensorSpec":
        return TensorSpec(name, self.dtype, self.shape, self.layout)


@dataclass(frozen=True)
class TensorValue:
    """A contiguous buffer in the declared layout, tied to its spec."""

    spec: TensorSpec
    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=self.spec.np_dtype)
        if arr.shape != self.spec.shape:
            raise SpecMismatch(
                f"tensor {self.spec.name!r}: buffer shape {arr.shape} != spec shape {self.spec.shape}"
            )
        object.__setattr__(self, "data", arr)

    @classmethod
    def wrap(cls, name: str, array: np.ndarray) -> "TensorValue":
        """Build a value whose spec is derived from the array itself."""
        arr = np.asarray(array)
        if arr.dtype == np.complex64:
            dtype = "complex64"
        elif arr.dtype == np.float32:
            dtype = "float32"
        else:
            raise SpecMismatch(f"cannot wrap dtype {arr.dtype}; cast to complex64/float32 first")
        return cls(TensorSpec(name, dtype, tuple(arr.shape)), arr)

    def renamed(self, name: str) -> "TensorValue":
        return TensorValue(self.spec.renamed(name), self.data)


# ---------------------------------------------------------------------------
# Adapters (pre/post kernels on graph edges)
# ---------------------------------------------------------------------------

PACK = "pack_complex_to_planar"
UNPACK = "unpack_planar_to_complex"
RESHAPE = "reshape"
ADAPTER_KINDS = (PACK, UNPACK, RESHAPE)


@dataclass(frozen=True)
class AdapterKind:
    """One boundary transform: pack/unpack complex or an element-preserving reshape."""

    kind: str
    shape: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ADAPTER_KINDS:
            raise ValueError(f"unknown adapter kind {self.kind!r}")
        if self.kind == RESHAPE:
            if not self.shape:
                raise ValueError("reshape adapter needs a target shape")
            object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        elif self.shape is not None:
            raise ValueError(f"adapter {self.kind!r} takes no shape argument")


def pack_complex_to_planar(t: TensorValue) -> TensorValue:
    """(d1..dk) complex64 -> (2, d1..dk) float32; plane 0 real, plane 1 imaginary."""
    if t.spec.dtype != "complex64":
        raise SpecMismatch(f"pack expects complex64 input, got {t.spec.dtype}")
    planar = np.ascontiguousarray(np.stack([t.data.real, t.data.imag], axis=0))
    spec = TensorSpec(t.spec.name, "float32", (2,) + t.spec.shape)
    return TensorValue(spec, planar)


def unpack_planar_to_complex(t: TensorValue) -> TensorValue:
    """(2, d1..dk) float32 -> (d1..dk) complex64. Exact inverse of pack."""
    if t.spec.dtype != "float32":
        raise SpecMismatch(f"unpack expects float32 input, got {t.spec.dtype}")
    if t.spec.shape[0] != 2 or len(t.spec.shape) < 2:
        raise SpecMismatch(f"unpack expects a leading axis of size 2, got shape {t.spec.shape}")
    cplx = np.ascontiguousarray(t.data[0] + 1j * t.data[1], dtype=np.complex64)
    spec = TensorSpec(t.spec.name, "complex64", t.spec.shape[1:])
    return TensorValue(spec, cplx)


def reshape_value(t: TensorValue, shape: tuple[int, ...]) -> TensorValue:
    """Reinterpret the buffer with a new shape; byte order is unchanged."""
    if math.prod(shape) != t.spec.n_elements:
        raise SpecMismatch(
            f"reshape {t.spec.shape} -> {shape} changes the element count "
            f"({t.spec.n_elements} -> {math.prod(shape)})"
        )
    spec = TensorSpec(t.spec.name, t.spec.dtype, shape)
    return TensorValue(spec, t.data.reshape(shape))


def apply_adapter(kind: AdapterKind, t: TensorValue) -> TensorValue:
    """Apply one adapter to a value. Raises SpecMismatch on incompatible input."""
    if kind.kind == PACK:
        return pack_complex_to_planar(t)
    if kind.kind == UNPACK:
        return unpack_planar_to_complex(t)
    assert kind.shape is not None
    return reshape_value(t, kind.shape)


def adapt_spec(kind: AdapterKind, spec: TensorSpec) -> TensorSpec:
    """Static image of a spec under an adapter, for build-time validation."""
    if kind.kind == PACK:
        if spec.dtype != "complex64":
            raise SpecMismatch(f"pack expects complex64, got {spec.dtype}")
        return TensorSpec(spec.name, "float32", (2,) + spec.shape)
    if kind.kind == UNPACK:
        if spec.dtype != "float32":
            raise SpecMismatch(f"unpack expects float32, got {spec.dtype}")
        if spec.shape[0] != 2 or len(spec.shape) < 2:
            raise SpecMismatch(f"unpack expects a leading axis of size 2, got {spec.shape}")
        return TensorSpec(spec.name, "complex64", spec.shape[1:])
    assert kind.shape is not None
    if math.prod(kind.shape) != spec.n_elements:
        raise SpecMismatch(
            f"reshape {spec.shape} -> {kind.shape} changes the element count"
        )
    return TensorSpec(spec.name, spec.dtype, kind.shape)
