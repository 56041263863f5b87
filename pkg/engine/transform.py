# engine/transform.py
"""
[TPPI Transform Pass]
픽셀 분류기(TPPP) 그래프를 image-to-image(TPPI) 그래프로 재작성합니다.
  rule 1: Fc -> Conv2d (가중치 reshape, 보존), GlobalAvgPool -> sliding AvgPool2d (보존)
  rule 2: 공간 stride 제거 (destride, 가중치는 유지하되 함수가 바뀌므로 재학습 필요)
  rule 3: 공간 zero pad 제거 (depad, 재학습 필요)
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from engine.errors import TransformError, ShapeError, TppiError
from engine.network import (
    NetworkGraph, LayerSpec, layer_out_dims, residual_crop, shape_infer, receptive_field, validate_tppi,
    CONV2D, CONV3D, BATCHNORM, RELU, AVGPOOL2D, GLOBAL_AVGPOOL, COLLAPSE_SPECTRAL, FC,
    RESIDUAL_BEGIN, RESIDUAL_END, SOFTMAX,
)
from infra.utils import get_logger, log_op_call

logger = get_logger("Transform")

TRANSFORMABLE = (CONV2D, CONV3D, BATCHNORM, RELU, AVGPOOL2D, GLOBAL_AVGPOOL, COLLAPSE_SPECTRAL, FC,
                 RESIDUAL_BEGIN, RESIDUAL_END, SOFTMAX)


@dataclass
class Rewrite:
    layer_id: str
    rule: str
    weight_preserving: bool


@dataclass
class TransformReport:
    rewrites: List[Rewrite] = field(default_factory=list)
    rf_before: Optional[int] = None
    rf_after: Optional[int] = None

    @property
    def retrain_required(self):
        return any(not r.weight_preserving for r in self.rewrites)

    def to_dict(self):
        return {
            "retrain_required": self.retrain_required,
            "receptive_field_before": self.rf_before,
            "receptive_field_after": self.rf_after,
            "rewrites": [{"layer_id": r.layer_id, "rule": r.rule, "weight_preserving": r.weight_preserving}
                         for r in self.rewrites],
        }


# =========================================================
# 🔁 [Single-layer rewrites]
# =========================================================
def fc_to_conv(layer: LayerSpec, incoming_shape) -> LayerSpec:
    """
    Fc(in=C*s*t) -> Conv2d(C -> out, kernel s x t).
    weight 열 인덱스 c*s*t + r*t + col -> conv weight [o, c, r, col] (channel-major, row, col)
    """
    if layer.kind != FC:
        raise TransformError(f"'{layer.id}': fc_to_conv expects an Fc layer, got {layer.kind}")
    if len(incoming_shape) != 3:
        raise TransformError(f"'{layer.id}': Fc must be fed a [C, s, s] feature map, got {list(incoming_shape)}")
    c, s, t = (int(d) for d in incoming_shape)
    expected = c * s * t
    if layer.p("in_features") != expected:
        raise TransformError(
            f"'{layer.id}': in_features {layer.p('in_features')} does not match incoming {c}x{s}x{t} "
            f"(expected {expected})")
    out = layer.p("out_features")
    conv = LayerSpec(layer.id, CONV2D, dict(
        in_channels=c, out_channels=out, kh=s, kw=t, stride_h=1, stride_w=1, pad=0, bias=layer.p("bias")))
    if "weight" in layer.weights:
        conv.weights["weight"] = np.asarray(layer.weights["weight"]).reshape(out, c, s, t).copy()
    if "bias" in layer.weights:
        conv.weights["bias"] = np.asarray(layer.weights["bias"]).copy()
    return conv


def destride(layer: LayerSpec) -> LayerSpec:
    """공간 stride -> 1, 공간 pad -> 0. 가중치 바이트는 그대로 (warm-start 용)"""
    if all(s == 1 for s in layer.spatial_stride):
        raise TransformError(f"'{layer.id}': not strided")
    return _respatial(layer)


def depad(layer: LayerSpec) -> LayerSpec:
    if layer.spatial_pad == 0:
        raise TransformError(f"'{layer.id}': not spatially padded")
    return _respatial(layer)


def _respatial(layer):
    params = dict(layer.params)
    if layer.kind == CONV2D:
        params.update(stride_h=1, stride_w=1, pad=0)
    elif layer.kind == CONV3D:
        params.update(stride_h=1, stride_w=1, pad_hw=0)
    elif layer.kind == AVGPOOL2D:
        params.update(stride=1, pad=0)
    else:
        raise TransformError(f"'{layer.id}': {layer.kind} has no spatial geometry to rewrite")
    return LayerSpec(layer.id, layer.kind, params, {k: np.asarray(v).copy() for k, v in layer.weights.items()})


def globalpool_to_sliding(layer: LayerSpec, incoming_shape) -> LayerSpec:
    if layer.kind != GLOBAL_AVGPOOL:
        raise TransformError(f"'{layer.id}': expects GlobalAvgPool, got {layer.kind}")
    if incoming_shape is None:
        raise TransformError(f"'{layer.id}': incoming spatial extent unknown (shape inference failed)")
    s, t = int(incoming_shape[-2]), int(incoming_shape[-1])
    if s != t:
        raise TransformError(f"'{layer.id}': non-square pooled extent {s}x{t}")
    return LayerSpec(layer.id, AVGPOOL2D, dict(k=s, stride=1, pad=0))


# =========================================================
# 🛠️ [Whole-graph pass]
# =========================================================
@log_op_call("transform")
def transform(net: NetworkGraph):
    """TPPP -> TPPI. 반환: (new_net, TransformReport)"""
    unknown = sorted({l.kind for l in net.layers if l.kind not in TRANSFORMABLE})
    if unknown:
        raise TransformError(f"untransformable layer kinds: {unknown}")
    try:
        original = shape_infer(net, net.m, net.m)
    except (ShapeError, TppiError) as e:
        raise TransformError(f"network does not shape-infer on its declared {net.m}x{net.m} input: {e}")

    report = TransformReport(rf_before=net.m)
    dims = net.input_spec.dims(net.m, net.m)
    stack = []
    layers = []

    for layer in net.layers:
        new = layer
        if layer.kind == FC:
            original_in = original.dims_of(layer.id).in_dims
            if list(dims) == list(original_in):
                new = fc_to_conv(layer, dims)
                report.rewrites.append(Rewrite(layer.id, "fc_to_conv", True))
            else:
                new = _fresh_head(layer, dims)
                report.rewrites.append(Rewrite(layer.id, "fc_to_conv(reinit)", False))
        elif layer.kind == GLOBAL_AVGPOOL:
            new = globalpool_to_sliding(layer, dims)
            report.rewrites.append(Rewrite(layer.id, "globalpool_to_sliding", True))
        elif any(s > 1 for s in layer.spatial_stride):
            new = destride(layer)
            report.rewrites.append(Rewrite(layer.id, "destride", False))
        elif layer.spatial_pad > 0:
            new = depad(layer)
            report.rewrites.append(Rewrite(layer.id, "depad", False))
        else:
            new = LayerSpec(layer.id, layer.kind, dict(layer.params),
                            {k: np.asarray(v).copy() for k, v in layer.weights.items()})
        layers.append(new)

        try:
            if new.kind == RESIDUAL_BEGIN:
                stack.append(list(dims))
            elif new.kind == RESIDUAL_END:
                residual_crop(new, stack.pop(), dims)
            else:
                dims = layer_out_dims(new, dims)
        except (ShapeError, TppiError) as e:
            raise TransformError(f"rewritten chain no longer fits a {net.m}x{net.m} patch at '{new.id}': {e}")

    name = net.name if not report.rewrites or net.name.endswith("-tppi") else f"{net.name}-tppi"
    out = NetworkGraph(layers, net.input_spec, net.num_classes, name)

    violations = validate_tppi(out)
    if violations:
        raise TransformError(f"transform left TPPI violations: {violations}")
    try:
        report.rf_after = receptive_field(out)
    except TppiError as e:
        raise TransformError(f"transformed network does not keep receptive field {net.m}: {e}")

    for r in report.rewrites:
        logger.info(f"🔁 [{r.rule}] {r.layer_id} (weight_preserving={r.weight_preserving})")
    logger.info(f"✅ transform '{net.name}' -> '{out.name}' | retrain_required={report.retrain_required}")
    return out, report


def _fresh_head(layer, dims):
    """입력 크기가 바뀐 Fc -> 가중치 없는 Conv2d (재학습 전 init_network 로 채움)"""
    if len(dims) != 3:
        raise TransformError(f"'{layer.id}': Fc must be fed a [C, s, s] feature map, got {list(dims)}")
    c, s, t = (int(d) for d in dims)
    return LayerSpec(layer.id, CONV2D, dict(
        in_channels=c, out_channels=layer.p("out_features"), kh=s, kw=t,
        stride_h=1, stride_w=1, pad=0, bias=layer.p("bias")))
