"""Hybrid computational-graph runtime.

A ``GraphManifest`` (usually loaded from YAML, see docs/manifest.md)
names nodes by factory kind, wires their ports with edges, and can
attach boundary adapters to individual edges. ``build_graph`` resolves
kinds against a ``NodeRegistry`` and returns an immutable, executable
``Graph`` whose node order is a deterministic topological order (ties
broken by manifest order).

The estimator slot: a node whose kind is the placeholder ``estimator``
is resolved at build time to ``chanest.<estimator_config.kind>``, so
swapping the active channel estimator is a one-line manifest edit.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Protocol

import yaml

from .tensors import AdapterKind, SpecMismatch, TensorSpec, TensorValue, adapt_spec, apply_adapter

ESTIMATOR_PLACEHOLDER = "estimator"


class GraphError(Exception):
    """Base class for graph construction and execution failures."""


class DuplicateKind(GraphError):
    pass


class UnknownKind(GraphError):
    pass


class CycleDetected(GraphError):
    pass


class PortMismatch(GraphError):
    pass


class BlobLoadError(GraphError):
    pass


class MissingInput(GraphError):
    pass


class ManifestError(GraphError):
    """Manifest violates a structural invariant; carries the diagnostics."""

    def __init__(self, diagnostics: list["Diagnostic"]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class NodeFailure(GraphError):
    def __init__(self, node: str, cause: BaseException):
        self.node = node
        self.cause = cause
        super().__init__(f"node {node!r} failed: {cause}")


# ---------------------------------------------------------------------------
# Manifest data model
# ---------------------------------------------------------------------------

Scalar = int | float | str | bool


@dataclass(frozen=True)
class NodeDescriptor:
    name: str
    kind: str
    params: Mapping[str, Scalar] = field(default_factory=dict)
    inputs: tuple[TensorSpec, ...] = ()
    outputs: tuple[TensorSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "inputs", tuple(self.inputs))
        object.__setattr__(self, "outputs", tuple(self.outputs))

    def input_spec(self, port: str) -> TensorSpec | None:
        return next((s for s in self.inputs if s.name == port), None)

    def output_spec(self, port: str) -> TensorSpec | None:
        return next((s for s in self.outputs if s.name == port), None)


@dataclass(frozen=True)
class PortRef:
    node: str
    port: str

    @classmethod
    def parse(cls, text: str) -> "PortRef":
        node, sep, port = text.partition(".")
        if not sep or not node or not port:
            raise ValueError(f"port reference {text!r} is not of the form node.port")
        return cls(node, port)

    def __str__(self) -> str:
        return f"{self.node}.{self.port}"


@dataclass(frozen=True)
class Edge:
    src: PortRef
    dst: PortRef


@dataclass(frozen=True)
class AdapterBinding:
    edge: Edge
    adapter: AdapterKind


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str
    model_dir: str | None = None
    snr_grid: tuple[int, ...] = ()
    prb_model_sizes: tuple[int, ...] = ()


@dataclass(frozen=True)
class GraphManifest:
    nodes: tuple[NodeDescriptor, ...]
    edges: tuple[Edge, ...] = ()
    adapters: tuple[AdapterBinding, ...] = ()
    estimator_config: EstimatorConfig | None = None

    def node(self, name: str) -> NodeDescriptor | None:
        return next((n for n in self.nodes if n.name == name), None)


@dataclass(frozen=True)
class Diagnostic:
    code: str
    location: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.location}: {self.message}"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def _edge_endpoint_spec(manifest: GraphManifest, edge: Edge,
                        diags: list[Diagnostic]) -> tuple[TensorSpec | None, TensorSpec | None]:
    src_node = manifest.node(edge.src.node)
    dst_node = manifest.node(edge.dst.node)
    src_spec = dst_spec = None
    if src_node is None:
        diags.append(Diagnostic("dangling-producer", str(edge.src), "unknown node"))
    else:
        src_spec = src_node.output_spec(edge.src.port)
        if src_spec is None:
            diags.append(Diagnostic("dangling-producer", str(edge.src),
                                    f"node {edge.src.node!r} has no output port {edge.src.port!r}"))
    if dst_node is None:
        diags.append(Diagnostic("dangling-consumer", str(edge.dst), "unknown node"))
    else:
        dst_spec = dst_node.input_spec(edge.dst.port)
        if dst_spec is None:
            diags.append(Diagnostic("dangling-consumer", str(edge.dst),
                                    f"node {edge.dst.node!r} has no input port {edge.dst.port!r}"))
    return src_spec, dst_spec


def validate_manifest(manifest: GraphManifest) -> list[Diagnostic]:
    """Check every GraphManifest invariant; one diagnostic per violation."""
    diags: list[Diagnostic] = []

    seen_nodes: set[str] = set()
    for node in manifest.nodes:
        if not node.name:
            diags.append(Diagnostic("bad-node-name", "<node>", "empty node name"))
            continue
        if node.name in seen_nodes:
            diags.append(Diagnostic("duplicate-node", node.name, "node name reused"))
        seen_nodes.add(node.name)
        port_names = [s.name for s in node.inputs] + [s.name for s in node.outputs]
        dupes = {p for p in port_names if port_names.count(p) > 1}
        for p in sorted(dupes):
            diags.append(Diagnostic("duplicate-port", f"{node.name}.{p}",
                                    "port name reused within the node"))
        if node.kind == ESTIMATOR_PLACEHOLDER and (
            manifest.estimator_config is None or not manifest.estimator_config.kind
        ):
            diags.append(Diagnostic("missing-estimator-config", node.name,
                                    "placeholder node needs estimator_config.kind"))

    adapter_for: dict[Edge, AdapterKind] = {}
    for binding in manifest.adapters:
        if binding.edge not in manifest.edges:
            diags.append(Diagnostic("adapter-unknown-edge",
                                    f"{binding.edge.src} -> {binding.edge.dst}",
                                    "adapter attached to an edge not in the manifest"))
        if binding.edge in adapter_for:
            diags.append(Diagnostic("adapter-duplicate",
                                    f"{binding.edge.src} -> {binding.edge.dst}",
                                    "edge has more than one adapter"))
        adapter_for[binding.edge] = binding.adapter

    consumers: dict[PortRef, int] = {}
    for edge in manifest.edges:
        consumers[edge.dst] = consumers.get(edge.dst, 0) + 1
    for ref, count in consumers.items():
        if count > 1:
            diags.append(Diagnostic("multiple-producers", str(ref),
                                    f"consumer port fed by {count} edges"))

    for edge in manifest.edges:
        src_spec, dst_spec = _edge_endpoint_spec(manifest, edge, diags)
        if src_spec is None or dst_spec is None:
            continue
        adapter = adapter_for.get(edge)
        try:
            effective = adapt_spec(adapter, src_spec) if adapter else src_spec
        except SpecMismatch as exc:
            diags.append(Diagnostic("adapter-mismatch",
                                    f"{edge.src} -> {edge.dst}", str(exc)))
            continue
        if not effective.compatible_with(dst_spec):
            diags.append(Diagnostic(
                "port-mismatch", f"{edge.src} -> {edge.dst}",
                f"producer {effective.dtype}{effective.shape} vs "
                f"consumer {dst_spec.dtype}{dst_spec.shape}",
            ))

    order = _topological_order(manifest)
    if order is None:
        diags.append(Diagnostic("cycle", "<graph>", "edge graph contains a cycle"))

    return diags


def _topological_order(manifest: GraphManifest) -> list[str] | None:
    """Kahn's algorithm; ready nodes are taken in manifest order."""
    names = [n.name for n in manifest.nodes]
    index = {name: i for i, name in enumerate(names)}
    indegree = {name: 0 for name in names}
    successors: dict[str, set[str]] = {name: set() for name in names}
    for edge in manifest.edges:
        if edge.src.node not in index or edge.dst.node not in index:
            continue
        if edge.dst.node not in successors[edge.src.node]:
            successors[edge.src.node].add(edge.dst.node)
            indegree[edge.dst.node] += 1
    ready = sorted((name for name in names if indegree[name] == 0), key=index.__getitem__)
    order: list[str] = []
    while ready:
        current = ready.pop(0)
        order.append(current)
        released = []
        for succ in successors[current]:
            indegree[succ] -= 1
            if indegree[succ] == 0:
                released.append(succ)
        if released:
            ready = sorted(ready + released, key=index.__getitem__)
    if len(order) != len(names):
        return None
    return order


# ---------------------------------------------------------------------------
# Registry and build
# ---------------------------------------------------------------------------

class GraphNode(Protocol):
    def run(self, inputs: dict[str, TensorValue]) -> dict[str, TensorValue]: ...


@dataclass(frozen=True)
class BuildContext:
    base_dir: Path
    estimator_config: EstimatorConfig | None


NodeFactory = Callable[[NodeDescriptor, BuildContext], GraphNode]


class NodeRegistry:
    """Factory table mapping kind strings to node constructors."""

    def __init__(self) -> None:
        self._factories: dict[str, NodeFactory] = {}

    def register(self, kind: str, constructor: NodeFactory) -> None:
        if not kind:
            raise ValueError("factory kind must be non-empty")
        if kind in self._factories:
            raise DuplicateKind(f"kind {kind!r} is already registered")
        self._factories[kind] = constructor

    def resolve(self, kind: str) -> NodeFactory:
        try:
            return self._factories[kind]
        except KeyError:
            raise UnknownKind(f"no factory registered for kind {kind!r}") from None

    def kinds(self) -> tuple[str, ...]:
        return tuple(sorted(self._factories))


def register_factory(registry: NodeRegistry, kind: str, constructor: NodeFactory) -> None:
    registry.register(kind, constructor)


@dataclass(frozen=True)
class _BoundInput:
    port: str
    src: PortRef
    adapter: AdapterKind | None


class Graph:
    """Built, immutable pipeline. Execution state is per-call only."""

    def __init__(self, manifest: GraphManifest, order: list[str],
                 impls: dict[str, GraphNode],
                 descriptors: dict[str, NodeDescriptor]) -> None:
        self.manifest = manifest
        self.node_order = tuple(order)
        self._impls = impls
        self._descriptors = descriptors

        producing = {edge.src for edge in manifest.edges}
        adapter_for = {b.edge: b.adapter for b in manifest.adapters}

        self._wiring: dict[str, list[_BoundInput]] = {name: [] for name in order}
        self._free_inputs: list[tuple[PortRef, TensorSpec]] = []
        for name in order:
            desc = descriptors[name]
            for spec in desc.inputs:
                ref = PortRef(name, spec.name)
                edge = next((e for e in manifest.edges if e.dst == ref), None)
                if edge is None:
                    self._free_inputs.append((ref, spec))
                else:
                    self._wiring[name].append(
                        _BoundInput(spec.name, edge.src, adapter_for.get(edge)))
        # Graph-level outputs: producer ports not consumed by any edge.
        self._free_outputs: list[tuple[PortRef, TensorSpec]] = []
        for name in order:
            desc = descriptors[name]
            for spec in desc.outputs:
                ref = PortRef(name, spec.name)
                if ref not in producing:
                    self._free_outputs.append((ref, spec))

    @property
    def input_ports(self) -> tuple[tuple[str, TensorSpec], ...]:
        return tuple((str(ref), spec) for ref, spec in self._free_inputs)

    @property
    def output_ports(self) -> tuple[tuple[str, TensorSpec], ...]:
        return tuple((str(ref), spec) for ref, spec in self._free_outputs)

    def descriptor(self, name: str) -> NodeDescriptor:
        return self._descriptors[name]

    def node_impl(self, name: str) -> GraphNode:
        return self._impls[name]

    def _execute(self, inputs: Mapping[str, TensorValue]) -> dict[str, TensorValue]:
        values: dict[PortRef, TensorValue] = {}
        bound = dict(inputs)
        for ref, spec in self._free_inputs:
            key = str(ref)
            if key not in bound:
                raise MissingInput(f"graph input {key!r} is not bound")
            value = bound.pop(key)
            if not value.spec.compatible_with(spec):
                raise SpecMismatch(
                    f"graph input {key!r}: bound {value.spec.dtype}{value.spec.shape}, "
                    f"declared {spec.dtype}{spec.shape}"
                )
            values[ref] = value
        if bound:
            raise SpecMismatch(f"bindings {sorted(bound)} are not graph inputs")

        for name in self.node_order:
            desc = self._descriptors[name]
            node_inputs: dict[str, TensorValue] = {}
            for spec in desc.inputs:
                ref = PortRef(name, spec.name)
                wired = next((w for w in self._wiring[name] if w.port == spec.name), None)
                if wired is None:
                    value = values[ref]
                else:
                    value = values[wired.src]
                    if wired.adapter is not None:
                        value = apply_adapter(wired.adapter, value)
                    if not value.spec.compatible_with(spec):
                        raise SpecMismatch(
                            f"edge into {ref}: got {value.spec.dtype}{value.spec.shape}, "
                            f"declared {spec.dtype}{spec.shape}"
                        )
                node_inputs[spec.name] = value.renamed(spec.name)
            try:
                produced = self._impls[name].run(node_inputs)
            except GraphError:
                raise
            except Exception as exc:
                raise NodeFailure(name, exc) from exc
            for spec in desc.outputs:
                if spec.name not in produced:
                    raise NodeFailure(
                        name, SpecMismatch(f"node did not produce output {spec.name!r}"))
                out = produced[spec.name]
                if not out.spec.compatible_with(spec):
                    raise NodeFailure(
                        name,
                        SpecMismatch(
                            f"output {spec.name!r}: produced {out.spec.dtype}{out.spec.shape}, "
                            f"declared {spec.dtype}{spec.shape}"
                        ),
                    )
                values[PortRef(name, spec.name)] = out.renamed(spec.name)
        return {str(ref): val for ref, val in values.items()}

    def execute(self, inputs: Mapping[str, TensorValue]) -> dict[str, TensorValue]:
        """Run the pipeline; returns values for all graph-level output ports."""
        values = self._execute(inputs)
        return {str(ref): values[str(ref)] for ref, _ in self._free_outputs}

    def execute_all(self, inputs: Mapping[str, TensorValue]) -> dict[str, TensorValue]:
        """Like execute, but returns every port value (metrics taps)."""
        return self._execute(inputs)


def build_graph(manifest: GraphManifest, registry: NodeRegistry,
                base_dir: str | Path = ".") -> Graph:
    """Validate, resolve factories, and assemble an executable graph."""
    diags = validate_manifest(manifest)
    if diags:
        if any(d.code == "cycle" for d in diags):
            raise CycleDetected(str(next(d for d in diags if d.code == "cycle")))
        mismatches = [d for d in diags if d.code in ("port-mismatch", "adapter-mismatch")]
        if mismatches:
            raise PortMismatch("; ".join(str(d) for d in mismatches))
        raise ManifestError(diags)

    order = _topological_order(manifest)
    assert order is not None

    ctx = BuildContext(base_dir=Path(base_dir), estimator_config=manifest.estimator_config)
    impls: dict[str, GraphNode] = {}
    descriptors: dict[str, NodeDescriptor] = {}
    for desc in manifest.nodes:
        resolved = desc
        if desc.kind == ESTIMATOR_PLACEHOLDER:
            assert manifest.estimator_config is not None
            resolved = replace(desc, kind=f"chanest.{manifest.estimator_config.kind}")
            # The perfect-CSI oracle consumes the true channel; grow the
            # port set so config-only swaps cover it too.
            if (resolved.kind == "chanest.perfect"
                    and resolved.input_spec("h_true") is None):
                ref = resolved.input_spec("rx_pilots")
                if ref is not None:
                    resolved = replace(
                        resolved, inputs=resolved.inputs + (ref.renamed("h_true"),))
        factory = registry.resolve(resolved.kind)
        impls[desc.name] = factory(resolved, ctx)
        descriptors[desc.name] = resolved
    return Graph(manifest, order, impls, descriptors)


def execute(graph: Graph, inputs: Mapping[str, TensorValue]) -> dict[str, TensorValue]:
    return graph.execute(inputs)


# ---------------------------------------------------------------------------
# YAML manifest loader (schema in docs/manifest.md; unknown keys are errors)
# ---------------------------------------------------------------------------

def _require_keys(obj: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ManifestError([Diagnostic("unknown-key", where, f"unknown keys {sorted(unknown)}")])
    missing = required - set(obj)
    if missing:
        raise ManifestError([Diagnostic("missing-key", where, f"missing keys {sorted(missing)}")])


def _spec_from_yaml(obj, where: str) -> TensorSpec:
    if not isinstance(obj, dict):
        raise ManifestError([Diagnostic("bad-spec", where, "tensor spec must be a mapping")])
    _require_keys(obj, {"name", "dtype", "shape", "layout"}, {"name", "dtype", "shape"}, where)
    try:
        return TensorSpec(obj["name"], obj["dtype"], tuple(obj["shape"]),
                          obj.get("layout", "row-major"))
    except (TypeError, ValueError) as exc:
        raise ManifestError([Diagnostic("bad-spec", where, str(exc))]) from exc


def manifest_from_dict(doc: dict) -> GraphManifest:
    if not isinstance(doc, dict):
        raise ManifestError([Diagnostic("bad-manifest", "<root>", "manifest must be a mapping")])
    _require_keys(doc, {"version", "nodes", "edges", "adapters", "estimator_config"},
                  {"nodes"}, "<root>")
    if doc.get("version", 1) != 1:
        raise ManifestError([Diagnostic("bad-version", "<root>",
                                        f"unsupported manifest version {doc.get('version')!r}")])

    nodes = []
    for i, entry in enumerate(doc["nodes"] or []):
        where = f"nodes[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError([Diagnostic("bad-node", where, "node must be a mapping")])
        _require_keys(entry, {"name", "kind", "params", "inputs", "outputs"},
                      {"name", "kind"}, where)
        params = entry.get("params") or {}
        if not isinstance(params, dict) or any(
            not isinstance(v, (int, float, str, bool)) for v in params.values()
        ):
            raise ManifestError([Diagnostic("bad-params", where,
                                            "params must map keys to scalars/strings")])
        nodes.append(NodeDescriptor(
            name=entry["name"],
            kind=entry["kind"],
            params=params,
            inputs=tuple(_spec_from_yaml(s, f"{where}.inputs") for s in entry.get("inputs") or []),
            outputs=tuple(_spec_from_yaml(s, f"{where}.outputs") for s in entry.get("outputs") or []),
        ))

    edges = []
    for i, entry in enumerate(doc.get("edges") or []):
        where = f"edges[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError([Diagnostic("bad-edge", where, "edge must be a mapping")])
        _require_keys(entry, {"from", "to"}, {"from", "to"}, where)
        try:
            edges.append(Edge(PortRef.parse(entry["from"]), PortRef.parse(entry["to"])))
        except ValueError as exc:
            raise ManifestError([Diagnostic("bad-edge", where, str(exc))]) from exc

    adapters = []
    for i, entry in enumerate(doc.get("adapters") or []):
        where = f"adapters[{i}]"
        if not isinstance(entry, dict):
            raise ManifestError([Diagnostic("bad-adapter", where, "adapter must be a mapping")])
        _require_keys(entry, {"from", "to", "kind", "shape"}, {"from", "to", "kind"}, where)
        try:
            edge = Edge(PortRef.parse(entry["from"]), PortRef.parse(entry["to"]))
            shape = tuple(entry["shape"]) if "shape" in entry else None
            adapters.append(AdapterBinding(edge, AdapterKind(entry["kind"], shape)))
        except ValueError as exc:
            raise ManifestError([Diagnostic("bad-adapter", where, str(exc))]) from exc

    estimator_config = None
    if "estimator_config" in doc and doc["estimator_config"] is not None:
        entry = doc["estimator_config"]
        where = "estimator_config"
        if not isinstance(entry, dict):
            raise ManifestError([Diagnostic("bad-estimator-config", where, "must be a mapping")])
        _require_keys(entry, {"kind", "model_dir", "snr_grid", "prb_model_sizes"},
                      {"kind"}, where)
        estimator_config = EstimatorConfig(
            kind=str(entry["kind"]),
            model_dir=entry.get("model_dir"),
            snr_grid=tuple(int(v) for v in entry.get("snr_grid") or ()),
            prb_model_sizes=tuple(int(v) for v in entry.get("prb_model_sizes") or ()),
        )

    return GraphManifest(nodes=tuple(nodes), edges=tuple(edges),
                         adapters=tuple(adapters), estimator_config=estimator_config)


def load_manifest(path: str | Path) -> GraphManifest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    return manifest_from_dict(doc)
