"""Model manifest: the declarative layer DAG, stored as a JSON document.

See docs/formats.md for the full grammar.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from typing import Any

from ..errors import ParseError

FORMAT_TAG = "fdk-model/1"


class Op(str, enum.Enum):
    INPUT = "INPUT"
    CONV = "CONV"
    RELU = "RELU"
    TANH = "TANH"
    MAXPOOL = "MAXPOOL"
    AVGPOOL = "AVGPOOL"
    CONCAT = "CONCAT"
    FC = "FC"
    DROPOUT = "DROPOUT"
    SOFTMAX = "SOFTMAX"


# weight_refs each op must carry
WEIGHT_SLOTS = {Op.CONV: ("kernel", "bias"), Op.FC: ("weights", "bias")}


@dataclass(frozen=True)
class Preprocessing:
    """Per-channel affine map applied to raw 0..255 pixels: ``(x * scale - mean) / std``."""

    scale: float = 1.0
    mean: tuple[float, ...] = (0.0, 0.0, 0.0)
    std: tuple[float, ...] = (1.0, 1.0, 1.0)

    def to_json(self) -> dict:
        return {"scale": self.scale, "mean": list(self.mean), "std": list(self.std)}


@dataclass(frozen=True)
class NodeSpec:
    id: str
    op: Op
    inputs: tuple[str, ...] = ()
    params: dict[str, Any] = field(default_factory=dict)
    weight_refs: dict[str, str] = field(default_factory=dict)

    def to_json(self) -> dict:
        out: dict[str, Any] = {"id": self.id, "op": self.op.value, "inputs": list(self.inputs)}
        if self.params:
            out["params"] = self.params
        if self.weight_refs:
            out["weights"] = self.weight_refs
        return out


@dataclass(frozen=True)
class ModelManifest:
    name: str
    input_shape: tuple[int, int, int]
    preprocessing: Preprocessing
    nodes: tuple[NodeSpec, ...]
    bottleneck_id: str
    output_id: str
    weights_file: str
    embedding_dim: int
    class_names: tuple[str, ...] | None = None

    def node(self, node_id: str) -> NodeSpec:
        for n in self.nodes:
            if n.id == node_id:
                return n
        raise KeyError(node_id)

    def to_json(self) -> dict:
        doc = {
            "format": FORMAT_TAG,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "preprocessing": self.preprocessing.to_json(),
            "nodes": [n.to_json() for n in self.nodes],
            "bottleneck_id": self.bottleneck_id,
            "output_id": self.output_id,
            "weights_file": self.weights_file,
            "embedding_dim": self.embedding_dim,
        }
        if self.class_names is not None:
            doc["class_names"] = list(self.class_names)
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2) + "\n"


def _require(doc: dict, key: str, kind, where: str = "manifest"):
    if key not in doc:
        raise ParseError(f"{where}: missing key {key!r}")
    value = doc[key]
    if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
        raise ParseError(f"{where}: {key!r} has wrong type {type(value).__name__}")
    return value


def _int_list(value, n: int, where: str) -> tuple[int, ...]:
    if (
        not isinstance(value, list)
        or len(value) != n
        or not all(isinstance(v, int) and not isinstance(v, bool) for v in value)
    ):
        raise ParseError(f"{where}: expected a list of {n} integers, got {value!r}")
    return tuple(value)


def _parse_node(doc, index: int) -> NodeSpec:
    where = f"nodes[{index}]"
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    unknown = set(doc) - {"id", "op", "inputs", "params", "weights"}
    if unknown:
        raise ParseError(f"{where}: unknown keys {sorted(unknown)}")
    node_id = _require(doc, "id", str, where)
    try:
        op = Op(_require(doc, "op", str, where))
    except ValueError:
        raise ParseError(f"{where}: unknown op {doc['op']!r}") from None
    inputs = doc.get("inputs", [])
    if not isinstance(inputs, list) or not all(isinstance(i, str) for i in inputs):
        raise ParseError(f"{where}: inputs must be a list of node ids")
    params = doc.get("params", {})
    refs = doc.get("weights", {})
    if not isinstance(params, dict) or not isinstance(refs, dict):
        raise ParseError(f"{where}: params and weights must be objects")
    if not all(isinstance(v, str) for v in refs.values()):
        raise ParseError(f"{where}: weight refs must be strings")
    return NodeSpec(node_id, op, tuple(inputs), dict(params), dict(refs))


def parse_manifest(text: str) -> ModelManifest:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("manifest must be a JSON object")
    if doc.get("format") != FORMAT_TAG:
        raise ParseError(f"unsupported manifest format {doc.get('format')!r}")
    pre = _require(doc, "preprocessing", dict)
    try:
        preprocessing = Preprocessing(
            scale=float(pre["scale"]),
            mean=tuple(float(v) for v in pre["mean"]),
            std=tuple(float(v) for v in pre["std"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"bad preprocessing block: {exc}") from None
    nodes = tuple(_parse_node(n, i) for i, n in enumerate(_require(doc, "nodes", list)))
    class_names = doc.get("class_names")
    if class_names is not None:
        if not isinstance(class_names, list) or not all(isinstance(c, str) for c in class_names):
            raise ParseError("class_names must be a list of strings")
        class_names = tuple(class_names)
    return ModelManifest(
        name=_require(doc, "name", str),
        input_shape=_int_list(doc.get("input_shape"), 3, "input_shape"),
        preprocessing=preprocessing,
        nodes=nodes,
        bottleneck_id=_require(doc, "bottleneck_id", str),
        output_id=_require(doc, "output_id", str),
        weights_file=_require(doc, "weights_file", str),
        embedding_dim=_require(doc, "embedding_dim", int),
        class_names=class_names,
    )
