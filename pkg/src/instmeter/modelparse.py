"""Model descriptors: post-fusion layer lists lowered to kernel operators.

Descriptors are expected AFTER operator fusion (as produced by the TFLite
converter).  Feeding a pre-fusion graph, e.g. Conv2D followed by a separate
ReLU that the converter would have folded in, will overcount cycles.

Required ``params`` per layer type (all integers):

    Conv2D              in_h in_w in_c out_c kh kw     [stride pad batch]
    DepthConv2D         in_h in_w in_c kh kw           [depth_multiplier stride pad batch]
    FullyConnected      in_features out_features       [batch]
    MaxPool2D/AvgPool2D in_h in_w in_c kh kw           [stride pad]
    ReLU/Add/Mul/Reshape  n, or h w c
    Softmax             classes                        [batch]
    BatchNormalization  h w c

Optional keys default to stride=1, pad=0, batch=1, depth_multiplier=1.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

from .instlib import OPERATOR_TYPES, OperatorInstance


class ModelError(ValueError):
    pass


class ShapeWarning(UserWarning):
    pass


LAYER_TYPES = OPERATOR_TYPES + ("BatchNormalization",)

_SPATIAL = ("in_h", "in_w", "in_c", "kh", "kw")
REQUIRED: dict[str, tuple[str, ...]] = {
    "Conv2D": _SPATIAL + ("out_c",),
    "DepthConv2D": _SPATIAL,
    "FullyConnected": ("in_features", "out_features"),
    "MaxPool2D": _SPATIAL,
    "AvgPool2D": _SPATIAL,
    "ReLU": ("n",),
    "Add": ("n",),
    "Mul": ("n",),
    "Reshape": ("n",),
    "Softmax": ("classes",),
    "BatchNormalization": ("h", "w", "c"),
}
DEFAULTS = {"stride": 1, "pad": 0, "batch": 1, "depth_multiplier": 1}
_ELEMENTWISE = ("ReLU", "Add", "Mul", "Reshape")


@dataclass(frozen=True)
class Layer:
    layer_type: str
    params: Mapping[str, int]


@dataclass(frozen=True)
class ModelDescriptor:
    name: str
    layers: tuple[Layer, ...]
    metadata: dict = field(default_factory=dict)


def _check_layer(index: int, doc) -> Layer:
    where = f"layer {index}"
    if not isinstance(doc, dict) or "type" not in doc:
        raise ModelError(f"{where}: expected an object with a 'type'")
    kind = doc["type"]
    if kind not in LAYER_TYPES:
        raise ModelError(f"{where}: unsupported layer type {kind!r}")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ModelError(f"{where} ({kind}): 'params' must be an object")
    for k, v in params.items():
        if isinstance(v, bool) or not isinstance(v, int):
            raise ModelError(f"{where} ({kind}): parameter {k!r} must be an integer, got {v!r}")
    need = REQUIRED[kind]
    if kind in _ELEMENTWISE and "n" not in params and all(k in params for k in ("h", "w", "c")):
        need = ("h", "w", "c")
    missing = [k for k in need if k not in params]
    if missing:
        raise ModelError(f"{where} ({kind}): missing required parameter(s) {', '.join(missing)}")
    if params.get("stride", 1) < 1:
        raise ModelError(f"{where} ({kind}): stride must be at least 1")
    return Layer(kind, dict(params))


def load_model(document) -> ModelDescriptor:
    if isinstance(document, (str, Path)):
        document = json.loads(Path(document).read_text())
    if not isinstance(document, dict):
        raise ModelError("model document must be a JSON object")
    name = document.get("name")
    if not isinstance(name, str) or not name:
        raise ModelError("model needs a non-empty 'name'")
    layers = document.get("layers")
    if not isinstance(layers, list):
        raise ModelError(f"{name}: 'layers' must be a list")
    meta = {k: v for k, v in document.items() if k not in ("name", "layers")}
    return ModelDescriptor(name, tuple(_check_layer(i, l) for i, l in enumerate(layers)), meta)


def out_dim(size: int, kernel: int, stride: int = 1, pad: int = 0) -> int:
    span = size + 2 * pad - kernel
    if span < 0:
        warnings.warn(f"kernel {kernel} exceeds padded input {size + 2 * pad}; output clamped to 0",
                      ShapeWarning, stacklevel=2)
        return 0
    return span // stride + 1


def _derive(kind: str, p: dict) -> dict:
    p = dict(p)
    derived = {}
    if kind in ("Conv2D", "DepthConv2D", "MaxPool2D", "AvgPool2D"):
        s, pad = p.get("stride", DEFAULTS["stride"]), p.get("pad", DEFAULTS["pad"])
        derived["out_h"] = out_dim(p["in_h"], p["kh"], s, pad)
        derived["out_w"] = out_dim(p["in_w"], p["kw"], s, pad)
    if kind == "DepthConv2D":
        derived["out_c"] = p["in_c"] * p.get("depth_multiplier", DEFAULTS["depth_multiplier"])
    if kind in _ELEMENTWISE and "n" not in p:
        derived["n"] = p["h"] * p["w"] * p["c"]
    if kind in ("Conv2D", "DepthConv2D", "FullyConnected", "Softmax"):
        derived["batch"] = p.get("batch", DEFAULTS["batch"])
    for k, v in derived.items():
        if k in p and p[k] != v:
            raise ModelError(f"{kind}: given {k}={p[k]} disagrees with derived value {v}")
        p[k] = v
    return p


def lower_layers(m: ModelDescriptor) -> list[OperatorInstance]:
    ops = []
    for index, layer in enumerate(m.layers):
        try:
            if layer.layer_type == "BatchNormalization":
                n = layer.params["h"] * layer.params["w"] * layer.params["c"]
                ops.append(OperatorInstance("Add", {"n": n}))
                ops.append(OperatorInstance("Mul", {"n": n}))
            else:
                ops.append(OperatorInstance(layer.layer_type, _derive(layer.layer_type, layer.params)))
        except ModelError as exc:
            raise ModelError(f"{m.name}: layer {index}: {exc}") from None
    return ops


def operator_macs(op: OperatorInstance) -> int:
    """Multiply-accumulate count; zero for operators without MACs."""
    p = op.params
    if op.op_type == "Conv2D":
        return p["batch"] * p["out_h"] * p["out_w"] * p["out_c"] * p["kh"] * p["kw"] * p["in_c"]
    if op.op_type == "DepthConv2D":
        return p["batch"] * p["out_h"] * p["out_w"] * p["out_c"] * p["kh"] * p["kw"]
    if op.op_type == "FullyConnected":
        return p["batch"] * p["in_features"] * p["out_features"]
    return 0


def model_macs(ops) -> int:
    return sum(operator_macs(op) for op in ops)
