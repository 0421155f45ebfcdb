from .executor import (
    Graph,
    attach_head,
    backbone_fingerprint,
    build_graph,
    detach_head,
    extract_features,
    forward,
    load_model,
    save_model,
    topological_order,
)
from .manifest import ModelManifest, NodeSpec, Op, Preprocessing, parse_manifest
from .weights import WeightStore

__all__ = [
    "Graph", "ModelManifest", "NodeSpec", "Op", "Preprocessing", "WeightStore",
    "attach_head", "backbone_fingerprint", "build_graph", "detach_head", "extract_features",
    "forward", "load_model", "parse_manifest", "save_model", "topological_order",
]
