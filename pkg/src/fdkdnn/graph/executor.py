"""Validated layer DAGs: load, run forward, cut at the bottleneck, re-attach a head."""
from __future__ import annotations

import graphlib
import hashlib
import json
from collections.abc import Mapping
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import tensor as T
from .._io import atomic_write_bytes, atomic_write_text
from ..errors import (
    CycleDetected,
    DimensionMismatch,
    EmptyOutput,
    MissingWeight,
    NonFiniteError,
    NonFiniteResult,
    ParseError,
    ShapeInferenceError,
    ShapeMismatch,
    UnknownNode,
)
from ..head.softmax import SoftmaxHead
from ..rng import Xorshift64Star
from .manifest import WEIGHT_SLOTS, ModelManifest, NodeSpec, Op, parse_manifest
from .weights import WeightStore

HEAD_FC = "head/fc"
HEAD_SOFTMAX = "head/softmax"


@dataclass(frozen=True, eq=False)
class Graph:
    """A loaded, validated model. Immutable; safe to share between threads."""

    manifest: ModelManifest
    weights: WeightStore
    order: tuple[str, ...]
    shapes: Mapping[str, tuple[int, int, int]]  # per-image (h, w, c) output of every node
    layers: Mapping[str, object]  # prepared ConvParams / PoolParams / (W, b) per node

    @property
    def nodes(self) -> dict[str, NodeSpec]:
        return {n.id: n for n in self.manifest.nodes}

    @property
    def class_names(self) -> tuple[str, ...] | None:
        return self.manifest.class_names

    def __len__(self) -> int:
        return len(self.manifest.nodes)


def topological_order(nodes, rng: Xorshift64Star | None = None) -> tuple[str, ...]:
    """Kahn order over ``nodes``; ties go to declaration order, or are drawn from ``rng``."""
    rank = {n.id: i for i, n in enumerate(nodes)}
    sorter = graphlib.TopologicalSorter({n.id: n.inputs for n in nodes})
    try:
        sorter.prepare()
    except graphlib.CycleError as exc:
        raise CycleDetected(f"cycle through nodes {exc.args[1]}") from None
    ready: list[str] = []
    order = []
    while sorter.is_active():
        ready.extend(sorted(sorter.get_ready(), key=rank.__getitem__))
        pick = rng.randbelow(len(ready)) if rng is not None else 0
        node_id = ready.pop(pick)
        order.append(node_id)
        sorter.done(node_id)
    return tuple(order)


def ancestors(nodes: Mapping[str, NodeSpec], target: str) -> set[str]:
    seen = set()
    stack = [target]
    while stack:
        nid = stack.pop()
        if nid not in seen:
            seen.add(nid)
            stack.extend(nodes[nid].inputs)
    return seen


def _weight(store: WeightStore, node: NodeSpec, slot: str) -> np.ndarray:
    ref = node.weight_refs.get(slot)
    if ref is None:
        raise MissingWeight(f"node {node.id!r} has no {slot!r} weight ref")
    if ref not in store:
        raise MissingWeight(f"node {node.id!r} refers to missing weight {ref!r}")
    return store[ref]


def _pair_param(node: NodeSpec, key: str, default=None) -> tuple[int, int]:
    value = node.params.get(key, default)
    if value is None:
        raise ParseError(f"node {node.id!r}: missing param {key!r}")
    if isinstance(value, int) and not isinstance(value, bool):
        value = [value, value]
    if (
        not isinstance(value, (list, tuple))
        or len(value) != 2
        or not all(isinstance(v, int) and v >= 1 for v in value)
    ):
        raise ParseError(f"node {node.id!r}: {key!r} must be two positive integers")
    return int(value[0]), int(value[1])


def _prepare(node: NodeSpec, in_shapes: list[tuple], store: WeightStore):
    """Build the layer parameters of one node and infer its per-image output shape."""
    arity = len(node.inputs)
    if node.op is Op.INPUT:
        raise ParseError("INPUT handled by caller")
    if node.op is Op.CONCAT:
        if arity < 1:
            raise ParseError(f"node {node.id!r}: CONCAT needs at least one input")
    elif arity != 1:
        raise ParseError(f"node {node.id!r}: {node.op.value} takes exactly one input, got {arity}")
    shape = in_shapes[0]
    h, w, c = shape
    try:
        if node.op is Op.CONV:
            kh, kw = _pair_param(node, "kernel")
            filters = node.params.get("filters")
            if not isinstance(filters, int) or filters < 1:
                raise ParseError(f"node {node.id!r}: 'filters' must be a positive integer")
            kernel = _weight(store, node, "kernel")
            bias = _weight(store, node, "bias")
            if kernel.size != kh * kw * c * filters or bias.size != filters:
                raise ShapeInferenceError(
                    f"node {node.id!r}: kernel has {kernel.size} values, expected "
                    f"{kh}x{kw}x{c}x{filters}; bias has {bias.size}, expected {filters}"
                )
            p = T.ConvParams(
                kernel.reshape(kh, kw, c, filters), bias,
                _pair_param(node, "stride", [1, 1]), node.params.get("padding", "VALID"),
            )
            _, oh, ow, oc = T.conv_output_shape((1, h, w, c), (kh, kw), filters, p.stride, p.padding)
            return p, (oh, ow, oc)
        if node.op in (Op.MAXPOOL, Op.AVGPOOL):
            p = T.PoolParams(
                _pair_param(node, "window"), _pair_param(node, "stride", [1, 1]),
                node.params.get("padding", "VALID"),
            )
            _, oh, ow, oc = T.pool_output_shape((1, h, w, c), p.window, p.stride, p.padding)
            return p, (oh, ow, oc)
        if node.op is Op.CONCAT:
            if any(s[:2] != shape[:2] for s in in_shapes):
                raise ShapeInferenceError(f"node {node.id!r}: concat inputs disagree {in_shapes}")
            return None, (h, w, sum(s[2] for s in in_shapes))
        if node.op is Op.FC:
            units = node.params.get("units")
            if not isinstance(units, int) or units < 1:
                raise ParseError(f"node {node.id!r}: 'units' must be a positive integer")
            W = _weight(store, node, "weights")
            b = _weight(store, node, "bias")
            d = h * w * c
            if W.size != units * d or b.size != units:
                raise ShapeInferenceError(
                    f"node {node.id!r}: weights have {W.size} values, expected {units}x{d}; "
                    f"bias has {b.size}, expected {units}"
                )
            return (W.reshape(units, d), b), (1, 1, units)
        if node.op is Op.DROPOUT:
            rate = float(node.params.get("rate", 0.0))
            if not 0.0 <= rate < 1.0:
                raise ParseError(f"node {node.id!r}: dropout rate {rate} outside [0, 1)")
            return rate, shape
        return None, shape  # RELU, TANH, SOFTMAX
    except (EmptyOutput, ValueError) as exc:
        if isinstance(exc, (ParseError, ShapeInferenceError)):
            raise
        raise ShapeInferenceError(f"node {node.id!r}: {exc}") from None


def build_graph(manifest: ModelManifest, weights: WeightStore) -> Graph:
    nodes = {}
    for n in manifest.nodes:
        if n.id in nodes:
            raise ParseError(f"duplicate node id {n.id!r}")
        nodes[n.id] = n
    for n in manifest.nodes:
        for src in n.inputs:
            if src not in nodes:
                raise UnknownNode(f"node {n.id!r} takes input from undeclared node {src!r}")
        for slot in WEIGHT_SLOTS.get(n.op, ()):
            if slot not in n.weight_refs:
                raise MissingWeight(f"node {n.id!r} has no {slot!r} weight ref")
    inputs = [n for n in manifest.nodes if n.op is Op.INPUT]
    if len(inputs) != 1:
        raise ParseError(f"expected exactly one INPUT node, found {len(inputs)}")
    if inputs[0].inputs:
        raise ParseError("INPUT node cannot have inputs")
    for key in ("bottleneck_id", "output_id"):
        if getattr(manifest, key) not in nodes:
            raise UnknownNode(f"{key} {getattr(manifest, key)!r} is not a declared node")
    if any(d < 1 for d in manifest.input_shape):
        raise ShapeInferenceError(f"input shape {manifest.input_shape} has empty dims")

    order = topological_order(manifest.nodes)
    shapes: dict[str, tuple[int, int, int]] = {}
    layers: dict[str, object] = {}
    for nid in order:
        node = nodes[nid]
        if node.op is Op.INPUT:
            shapes[nid] = tuple(manifest.input_shape)
            continue
        layers[nid], shapes[nid] = _prepare(node, [shapes[s] for s in node.inputs], weights)

    bh, bw, bc = shapes[manifest.bottleneck_id]
    if bh * bw * bc != manifest.embedding_dim:
        raise ShapeInferenceError(
            f"bottleneck {manifest.bottleneck_id!r} yields {bh * bw * bc} features, "
            f"manifest declares embedding_dim {manifest.embedding_dim}"
        )
    if manifest.class_names is not None:
        oh, ow, oc = shapes[manifest.output_id]
        if oh * ow * oc != len(manifest.class_names):
            raise ShapeInferenceError(
                f"output has {oh * ow * oc} values for {len(manifest.class_names)} class names"
            )
    return Graph(manifest, weights, order, shapes, layers)


def load_model(manifest_path) -> Graph:
    path = Path(manifest_path)
    manifest = parse_manifest(path.read_text(encoding="utf-8"))
    weights_path = path.parent / manifest.weights_file
    if not weights_path.is_file():
        raise MissingWeight(f"weights file {weights_path} not found")
    return build_graph(manifest, WeightStore.from_bytes(weights_path.read_bytes()))


def save_model(g: Graph, manifest_path) -> Path:
    """Write the manifest, its FDKW blob and (if present) a classes file next to it."""
    path = Path(manifest_path)
    stem = path.name.split(".")[0]
    manifest = replace(g.manifest, weights_file=f"{stem}.fdkw")
    atomic_write_bytes(path.parent / manifest.weights_file, g.weights.to_bytes())
    if manifest.class_names is not None:
        atomic_write_text(path.parent / f"{stem}.classes.txt", "".join(f"{c}\n" for c in manifest.class_names))
    atomic_write_text(path, manifest.dumps())
    return path


def _run_node(g: Graph, node: NodeSpec, args: list[np.ndarray]) -> np.ndarray:
    layer = g.layers.get(node.id)
    op = node.op
    if op is Op.CONV:
        return T.conv2d(args[0], layer)
    if op is Op.RELU:
        return T.relu(args[0])
    if op is Op.TANH:
        return T.tanh_act(args[0])
    if op is Op.MAXPOOL:
        return T.max_pool(args[0], layer)
    if op is Op.AVGPOOL:
        return T.avg_pool(args[0], layer)
    if op is Op.CONCAT:
        return T.concat_channels(args)
    if op is Op.FC:
        W, b = layer
        return T.fully_connected(T.flatten(args[0]), W, b)[:, None, None, :]
    if op is Op.DROPOUT:
        # frozen backbone: dropout is always the inference-mode identity
        return T.dropout(args[0], layer, T.Mode.INFER)
    if op is Op.SOFTMAX:
        return T.softmax(args[0])
    raise AssertionError(op)


def forward(
    g: Graph, x: np.ndarray, *, until: str | None = None, order: tuple[str, ...] | None = None
) -> dict[str, np.ndarray]:
    """Evaluate the graph on an NHWC batch and return every node's output.

    With ``until``, only that node and its ancestors are evaluated.
    """
    if x.ndim != 4 or tuple(x.shape[1:]) != tuple(g.manifest.input_shape):
        raise ShapeMismatch(f"input {x.shape} does not match declared (n, {g.manifest.input_shape})")
    x = np.ascontiguousarray(x, dtype=np.float32)
    nodes = g.nodes
    needed = ancestors(nodes, until) if until is not None else None
    values: dict[str, np.ndarray] = {}
    for nid in order or g.order:
        if needed is not None and nid not in needed:
            continue
        node = nodes[nid]
        try:
            if node.op is Op.INPUT:
                if not np.isfinite(x).all():
                    raise NonFiniteResult("input contains NaN or Inf")
                values[nid] = x
            else:
                values[nid] = _run_node(g, node, [values[s] for s in node.inputs])
        except NonFiniteError as exc:
            raise NonFiniteResult(str(exc), node_id=nid) from None
    return values


def extract_features(g: Graph, x: np.ndarray) -> np.ndarray:
    """Bottleneck embeddings, shape (n, embedding_dim); downstream nodes are skipped."""
    bottleneck = g.manifest.bottleneck_id
    return T.flatten(forward(g, x, until=bottleneck)[bottleneck])


def attach_head(g: Graph, head: SoftmaxHead, class_names=None) -> Graph:
    """Replace everything after the bottleneck with ``head`` (FC + SOFTMAX)."""
    m = g.manifest
    names = tuple(class_names) if class_names is not None else head.class_names
    if head.D != m.embedding_dim:
        raise DimensionMismatch(f"head expects D={head.D}, backbone embeds to {m.embedding_dim}")
    if len(names) != head.K:
        raise DimensionMismatch(f"{len(names)} class names for a {head.K}-way head")
    keep = ancestors(g.nodes, m.bottleneck_id)
    backbone = [n for n in m.nodes if n.id in keep]
    fc_id = HEAD_FC
    while fc_id in keep:
        fc_id = "_" + fc_id
    sm_id = fc_id.replace("fc", "softmax")
    fc = NodeSpec(
        fc_id, Op.FC, (m.bottleneck_id,), {"units": head.K},
        {"weights": f"{fc_id}/weights", "bias": f"{fc_id}/bias"},
    )
    sm = NodeSpec(sm_id, Op.SOFTMAX, (fc_id,))
    refs = [r for n in backbone for r in n.weight_refs.values()]
    store = {r: g.weights[r] for r in refs}
    store[f"{fc_id}/weights"] = head.W
    store[f"{fc_id}/bias"] = head.b
    manifest = replace(
        m, name=f"{m.name}-retrained", nodes=tuple(backbone) + (fc, sm),
        output_id=sm_id, class_names=names,
    )
    return build_graph(manifest, WeightStore(store))


def detach_head(g: Graph) -> SoftmaxHead:
    """Recover the trained head from a graph produced by ``attach_head``."""
    m = g.manifest
    out = g.nodes[m.output_id]
    fc = g.nodes[out.inputs[0]] if out.op is Op.SOFTMAX and len(out.inputs) == 1 else None
    if fc is None or fc.op is not Op.FC or fc.inputs != (m.bottleneck_id,):
        raise ParseError("graph output is not FC + SOFTMAX on the bottleneck")
    W, b = g.layers[fc.id]
    names = m.class_names or tuple(f"class_{k}" for k in range(W.shape[0]))
    return SoftmaxHead(W, b, names)


def backbone_fingerprint(g: Graph) -> bytes:
    """SHA-256 over the feature-extraction subgraph (structure, preprocessing, weights).

    Graphs that share a backbone share a fingerprint, whatever sits after
    the bottleneck.
    """
    m = g.manifest
    keep = ancestors(g.nodes, m.bottleneck_id)
    backbone = [n for n in m.nodes if n.id in keep]
    doc = {
        "input_shape": list(m.input_shape),
        "preprocessing": m.preprocessing.to_json(),
        "bottleneck_id": m.bottleneck_id,
        "nodes": [n.to_json() for n in backbone],
    }
    h = hashlib.sha256(json.dumps(doc, sort_keys=True).encode("utf-8"))
    for n in backbone:
        for slot in sorted(n.weight_refs):
            h.update(g.weights[n.weight_refs[slot]].tobytes())
    return h.digest()
