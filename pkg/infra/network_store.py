# infra/network_store.py
"""
[네트워크 파일 저장/로드]
UTF-8 JSON 문서 하나:
  header: format_version, name, bands, sample_size_m, num_classes, input_rank
  layers: [{id, kind, params, weights: {name: {shape, data(base64 '<f4')}}}]
가중치는 little-endian 32-bit float 로 [out, in, (kd), kh, kw] 순서 그대로 저장 -> 비트 단위 round trip.
"""
import base64
import binascii
import json
import os

import numpy as np

from config import Config
from engine.errors import NetworkFormatError, ParamTypeError, TppiError
from engine.network import LayerSpec, InputSpec, NetworkGraph, check_network
from infra.utils import get_logger

logger = get_logger("NetworkStore")

WEIGHT_DTYPE = np.dtype("<f4")


def _encode(arr):
    arr = np.ascontiguousarray(arr, dtype=WEIGHT_DTYPE)
    return {"shape": list(arr.shape), "data": base64.b64encode(arr.tobytes()).decode("ascii")}


def network_to_dict(net: NetworkGraph):
    return {
        "format_version": Config.NETWORK_FORMAT_VERSION,
        "name": net.name,
        "bands": net.bands,
        "sample_size_m": net.m,
        "num_classes": net.num_classes,
        "input_rank": net.input_spec.rank,
        "layers": [{
            "id": layer.id,
            "kind": layer.kind,
            "params": dict(layer.params),
            "weights": {key: _encode(layer.weights[key]) for key in sorted(layer.weights)},
        } for layer in net.layers],
    }


def save_network(net: NetworkGraph, path):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(network_to_dict(net), f, indent=1)
    logger.info(f"💾 network '{net.name}' ({len(net.layers)} layers) -> {path}")


# =========================================================
# 📥 [Load + 검증] 오류 위치는 JSON pointer 로 보고
# =========================================================
def _require(doc, key, kind, path):
    if key not in doc:
        raise NetworkFormatError(f"missing field '{key}'", f"{path}/{key}")
    value = doc[key]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise NetworkFormatError(f"expected an integer, found {type(value).__name__}", f"{path}/{key}")
    if kind is not int and not isinstance(value, kind):
        raise NetworkFormatError(f"expected {kind.__name__}, found {type(value).__name__}", f"{path}/{key}")
    return value


def _decode(entry, expected_shape, path):
    if not isinstance(entry, dict):
        raise NetworkFormatError("weight entry must be an object", path)
    try:
        raw = base64.b64decode(_require(entry, "data", str, path), validate=True)
    except binascii.Error as e:
        raise NetworkFormatError(f"invalid base64 payload ({e})", f"{path}/data")
    if len(raw) % WEIGHT_DTYPE.itemsize:
        raise NetworkFormatError(f"payload of {len(raw)} bytes is not a whole number of f32 values", f"{path}/data")
    expected = int(np.prod(expected_shape))
    found = len(raw) // WEIGHT_DTYPE.itemsize
    if found != expected:
        raise NetworkFormatError(f"expected {expected} values, found {found}", f"{path}/data")
    shape = entry.get("shape")
    if shape is not None and (not isinstance(shape, list) or tuple(shape) != tuple(expected_shape)):
        raise NetworkFormatError(f"shape {shape!r} does not match {list(expected_shape)}", f"{path}/shape")
    return np.frombuffer(raw, dtype=WEIGHT_DTYPE).reshape(expected_shape).copy()


def network_from_dict(doc, source="<memory>") -> NetworkGraph:
    if not isinstance(doc, dict):
        raise NetworkFormatError("document root must be an object", "")
    version = _require(doc, "format_version", int, "")
    if version != Config.NETWORK_FORMAT_VERSION:
        raise NetworkFormatError(f"unsupported format_version {version}", "/format_version")
    bands = _require(doc, "bands", int, "")
    m = _require(doc, "sample_size_m", int, "")
    num_classes = _require(doc, "num_classes", int, "")
    rank = _require(doc, "input_rank", int, "") if "input_rank" in doc else 3
    if rank not in (3, 4):
        raise NetworkFormatError(f"input_rank must be 3 or 4, got {rank}", "/input_rank")
    for key, value in (("bands", bands), ("sample_size_m", m), ("num_classes", num_classes)):
        if value < 1:
            raise NetworkFormatError(f"must be >= 1, got {value}", f"/{key}")
    name = _require(doc, "name", str, "") if doc.get("name") is not None else "net"
    raw_layers = _require(doc, "layers", list, "")

    layers = []
    for i, item in enumerate(raw_layers):
        path = f"/layers/{i}"
        if not isinstance(item, dict):
            raise NetworkFormatError("layer entry must be an object", path)
        lid = _require(item, "id", str, path)
        kind = _require(item, "kind", str, path)
        params = item.get("params", {})
        if not isinstance(params, dict):
            raise NetworkFormatError(f"expected object, found {type(params).__name__}", f"{path}/params")
        try:
            layer = LayerSpec(lid, kind, dict(params))
        except ParamTypeError as e:
            raise NetworkFormatError(str(e), f"{path}/params/{e.key}")
        except TppiError as e:
            raise NetworkFormatError(str(e), f"{path}/params")
        expected = layer.weight_shapes()
        weights = item.get("weights", {}) or {}
        if not isinstance(weights, dict):
            raise NetworkFormatError(f"expected object, found {type(weights).__name__}", f"{path}/weights")
        for key, entry in weights.items():
            if key not in expected:
                raise NetworkFormatError(f"unexpected weight array '{key}' for {kind}", f"{path}/weights/{key}")
            layer.weights[key] = _decode(entry, expected[key], f"{path}/weights/{key}")
        layers.append(layer)

    try:
        net = NetworkGraph(layers, InputSpec(bands=bands, m=m, rank=rank), num_classes, name or "net")
        check_network(net)
    except TppiError as e:
        raise NetworkFormatError(str(e), "/layers")
    logger.debug(f"network '{net.name}' loaded from {source}")
    return net


def load_network(path) -> NetworkGraph:
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise NetworkFormatError(f"{path}: invalid JSON ({e.msg} at line {e.lineno})", "")
    return network_from_dict(doc, path)
