"""Deterministic stand-in backbone: a small two-block Inception-style network.

input 32x32x3
  -> conv 3x3/2 (16) -> relu -> maxpool 3x3/2          8x8x16
  -> block A: [conv 1x1 (16) | conv 3x3 (16) | maxpool 3x3/1] -> concat -> relu   8x8x48
  -> block B: [conv 1x1 (32) | conv 3x3 (32)] -> concat -> relu                  8x8x64
  -> global avgpool 8x8 (bottleneck, 64 features)
  -> dropout -> fc (10) -> softmax

Weights are He-normal, biases N(0, 0.1^2), all drawn from the xorshift
generator, so the bundled files are reproducible bit for bit.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path

import numpy as np

from ..rng import Xorshift64Star
from .executor import Graph, build_graph, save_model
from .manifest import ModelManifest, NodeSpec, Op, Preprocessing
from .weights import WeightStore

DEFAULT_SEED = 20170601
INPUT_SHAPE = (32, 32, 3)
EMBEDDING_DIM = 64
IMAGENET_STANDIN_CLASSES = 10
PREPROCESSING = Preprocessing(scale=1.0 / 255.0, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25))
MANIFEST_NAME = "tiny_inception.json"


def _conv(nid, src, k, filters, stride=1):
    params = {"kernel": [k, k], "filters": filters, "stride": [stride, stride], "padding": "SAME"}
    return NodeSpec(nid, Op.CONV, (src,), params, {"kernel": f"{nid}/kernel", "bias": f"{nid}/bias"})


def _layers() -> list[NodeSpec]:
    same = "SAME"
    return [
        NodeSpec("input", Op.INPUT),
        _conv("stem/conv", "input", 3, 16, stride=2),
        NodeSpec("stem/relu", Op.RELU, ("stem/conv",)),
        NodeSpec("stem/pool", Op.MAXPOOL, ("stem/relu",), {"window": [3, 3], "stride": [2, 2], "padding": same}),
        _conv("a/1x1", "stem/pool", 1, 16),
        _conv("a/3x3", "stem/pool", 3, 16),
        NodeSpec("a/pool", Op.MAXPOOL, ("stem/pool",), {"window": [3, 3], "stride": [1, 1], "padding": same}),
        NodeSpec("a/concat", Op.CONCAT, ("a/1x1", "a/3x3", "a/pool")),
        NodeSpec("a/relu", Op.RELU, ("a/concat",)),
        _conv("b/1x1", "a/relu", 1, 32),
        _conv("b/3x3", "a/relu", 3, 32),
        NodeSpec("b/concat", Op.CONCAT, ("b/1x1", "b/3x3")),
        NodeSpec("b/relu", Op.RELU, ("b/concat",)),
        NodeSpec("gap", Op.AVGPOOL, ("b/relu",), {"window": [8, 8], "stride": [1, 1], "padding": "VALID"}),
        NodeSpec("dropout", Op.DROPOUT, ("gap",), {"rate": 0.2}),
        NodeSpec("logits", Op.FC, ("dropout",), {"units": IMAGENET_STANDIN_CLASSES},
                 {"weights": "logits/weights", "bias": "logits/bias"}),
        NodeSpec("softmax", Op.SOFTMAX, ("logits",)),
    ]


def make_tiny_inception(seed: int = DEFAULT_SEED) -> Graph:
    nodes = _layers()
    manifest = ModelManifest(
        name="tiny-inception",
        input_shape=INPUT_SHAPE,
        preprocessing=PREPROCESSING,
        nodes=tuple(nodes),
        bottleneck_id="gap",
        output_id="softmax",
        weights_file="tiny_inception.fdkw",
        embedding_dim=EMBEDDING_DIM,
    )
    # channel counts flowing into each weighted layer
    fan_in_channels = {"stem/conv": 3, "a/1x1": 16, "a/3x3": 16, "b/1x1": 48, "b/3x3": 48, "logits": EMBEDDING_DIM}
    weights = {}
    for index, node in enumerate(nodes):
        if node.op is Op.CONV:
            kh, kw = node.params["kernel"]
            fan_in = kh * kw * fan_in_channels[node.id]
            shape = (kh, kw, fan_in_channels[node.id], node.params["filters"])
            n_out = node.params["filters"]
        elif node.op is Op.FC:
            fan_in = fan_in_channels[node.id]
            shape = (node.params["units"], fan_in)
            n_out = node.params["units"]
        else:
            continue
        rng = Xorshift64Star(seed, index)
        w = rng.normal_array(math.prod(shape)) * math.sqrt(2.0 / fan_in)
        b = rng.normal_array(n_out) * 0.1
        refs = node.weight_refs
        weights[refs.get("kernel", refs.get("weights"))] = w.astype(np.float32)
        weights[refs["bias"]] = b.astype(np.float32)
    return build_graph(manifest, WeightStore(weights))


def write_tiny_inception(out_dir, seed: int = DEFAULT_SEED) -> Path:
    return save_model(make_tiny_inception(seed), Path(out_dir) / MANIFEST_NAME)


def bundled_manifest_path() -> Path:
    """Path of the tiny-inception manifest shipped inside the package."""
    return Path(str(resources.files("fdkdnn") / "assets" / "tiny_inception" / MANIFEST_NAME))
