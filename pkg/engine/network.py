# engine/network.py
"""
[Network IR]
스펙트럴-공간 CNN 을 순차 레이어 그래프로 표현합니다.
- shape inference / receptive field / TPPI 규칙 검증 / FLOPs(MAC) 비용 모델
- 잔차(residual) 연결은 ResidualBegin ~ ResidualEnd 사이의 순차 구간 + 덧셈으로만 표현 (일반 DAG 없음)
"""
import copy
import hashlib
import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

import numpy as np

from engine.errors import (
    ShapeError, KernelTooLargeError, ReceptiveFieldError, TppiViolationError, TppiError, ParamTypeError,
)
from config import Config
from engine.tensor import conv_out_dim

# =========================================================
# 🧱 [Layer vocabulary]
# =========================================================
CONV2D = "Conv2d"
CONV3D = "Conv3d"
BATCHNORM = "BatchNorm"
RELU = "ReLU"
AVGPOOL2D = "AvgPool2d"
GLOBAL_AVGPOOL = "GlobalAvgPool"
COLLAPSE_SPECTRAL = "CollapseSpectral"
FC = "Fc"
RESIDUAL_BEGIN = "ResidualBegin"
RESIDUAL_END = "ResidualEnd"
SOFTMAX = "Softmax"

LAYER_KINDS = (CONV2D, CONV3D, BATCHNORM, RELU, AVGPOOL2D, GLOBAL_AVGPOOL,
               COLLAPSE_SPECTRAL, FC, RESIDUAL_BEGIN, RESIDUAL_END, SOFTMAX)

# 종류별 필수 파라미터 (비어 있으면 non-parametric)
LAYER_PARAMS = {
    CONV2D: ("in_channels", "out_channels", "kh", "kw", "stride_h", "stride_w", "pad", "bias"),
    CONV3D: ("in_channels", "out_channels", "kd", "kh", "kw",
             "stride_d", "stride_h", "stride_w", "pad_d", "pad_hw", "bias"),
    BATCHNORM: ("channels", "epsilon"),
    AVGPOOL2D: ("k", "stride", "pad"),
    FC: ("in_features", "out_features", "bias"),
    RELU: (), GLOBAL_AVGPOOL: (), COLLAPSE_SPECTRAL: (),
    RESIDUAL_BEGIN: (), RESIDUAL_END: (), SOFTMAX: (),
}
STRIDE_KEYS = ("stride", "stride_h", "stride_w", "stride_d")
FLAG_KEYS = ("bias",)
REAL_KEYS = ("epsilon",)
PAD_KEYS = ("pad", "pad_d", "pad_hw")


def param_type_problem(key, value) -> Optional[str]:
    """파라미터 값의 타입이 틀렸으면 사유, 맞으면 None (bool 은 정수로 인정하지 않음)"""
    is_flag = isinstance(value, (bool, np.bool_))
    if key in FLAG_KEYS:
        return None if is_flag else f"expected a boolean, found {type(value).__name__}"
    if is_flag:
        return "expected a number, found bool"
    if key in REAL_KEYS:
        if not isinstance(value, numbers.Real):
            return f"expected a number, found {type(value).__name__}"
        if not value > 0:
            return f"must be > 0, got {value}"
        return None
    if not isinstance(value, numbers.Integral):
        return f"expected an integer, found {type(value).__name__}"
    return None


RULE_NO_FC = 1
RULE_NO_DOWNSAMPLE = 2
RULE_NO_SPATIAL_PAD = 3


@dataclass
class LayerSpec:
    id: str
    kind: str
    params: Dict[str, object] = field(default_factory=dict)
    weights: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise TppiError(f"layer '{self.id}': unknown kind '{self.kind}'")
        required = LAYER_PARAMS[self.kind]
        missing = [k for k in required if k not in self.params]
        extra = [k for k in self.params if k not in required]
        if missing or extra:
            raise TppiError(f"layer '{self.id}' ({self.kind}): missing params {missing}, unexpected {extra}")
        for key in required:
            problem = param_type_problem(key, self.params[key])
            if problem:
                raise ParamTypeError(f"layer '{self.id}': param '{key}' {problem}", key)
            if key not in FLAG_KEYS + REAL_KEYS + STRIDE_KEYS + PAD_KEYS and self.params[key] < 1:
                raise ShapeError(f"layer '{self.id}': {key} must be >= 1", axis=key)
        for key in STRIDE_KEYS:
            if key in self.params and int(self.params[key]) < 1:
                raise ShapeError(f"layer '{self.id}': {key} must be >= 1", axis=key)
        for key in PAD_KEYS:
            if key in self.params and int(self.params[key]) < 0:
                raise ShapeError(f"layer '{self.id}': {key} must be >= 0", axis=key)

    def p(self, key):
        return self.params[key]

    @property
    def is_parametric(self):
        return bool(LAYER_PARAMS[self.kind])

    @property
    def spatial_kernel(self) -> Tuple[int, int]:
        if self.kind in (CONV2D, CONV3D):
            return int(self.p("kh")), int(self.p("kw"))
        if self.kind == AVGPOOL2D:
            return int(self.p("k")), int(self.p("k"))
        return 1, 1

    @property
    def spatial_stride(self) -> Tuple[int, int]:
        if self.kind in (CONV2D, CONV3D):
            return int(self.p("stride_h")), int(self.p("stride_w"))
        if self.kind == AVGPOOL2D:
            return int(self.p("stride")), int(self.p("stride"))
        return 1, 1

    @property
    def spatial_pad(self) -> int:
        if self.kind in (CONV2D, AVGPOOL2D):
            return int(self.p("pad"))
        if self.kind == CONV3D:
            return int(self.p("pad_hw"))
        return 0

    def weight_shapes(self) -> Dict[str, tuple]:
        """이 레이어가 가져야 할 가중치 배열 이름 -> shape"""
        p = self.params
        if self.kind == CONV2D:
            shapes = {"weight": (p["out_channels"], p["in_channels"], p["kh"], p["kw"])}
        elif self.kind == CONV3D:
            shapes = {"weight": (p["out_channels"], p["in_channels"], p["kd"], p["kh"], p["kw"])}
        elif self.kind == FC:
            shapes = {"weight": (p["out_features"], p["in_features"])}
        elif self.kind == BATCHNORM:
            c = p["channels"]
            return {"gamma": (c,), "beta": (c,), "running_mean": (c,), "running_var": (c,)}
        else:
            return {}
        if p["bias"]:
            shapes["bias"] = (p["out_channels"] if self.kind != FC else p["out_features"],)
        return {k: tuple(int(d) for d in v) for k, v in shapes.items()}


@dataclass
class InputSpec:
    bands: int
    m: int
    rank: int = 3

    def dims(self, h, w):
        return [self.bands, h, w] if self.rank == 3 else [1, self.bands, h, w]


@dataclass
class NetworkGraph:
    layers: List[LayerSpec]
    input_spec: InputSpec
    num_classes: int
    name: str = "net"

    def __post_init__(self):
        if self.input_spec.rank not in (3, 4):
            raise TppiError(f"input rank must be 3 or 4, got {self.input_spec.rank}")
        ids = [layer.id for layer in self.layers]
        if len(set(ids)) != len(ids):
            raise TppiError("layer ids must be unique")
        depth = 0
        for layer in self.layers:
            if layer.kind == RESIDUAL_BEGIN:
                depth += 1
            elif layer.kind == RESIDUAL_END:
                depth -= 1
                if depth < 0:
                    raise TppiError(f"'{layer.id}': ResidualEnd without matching ResidualBegin")
        if depth:
            raise TppiError(f"{depth} ResidualBegin marker(s) never closed")

    @property
    def m(self):
        return self.input_spec.m

    @property
    def bands(self):
        return self.input_spec.bands

    def copy(self):
        return copy.deepcopy(self)

    def layer(self, layer_id):
        for layer in self.layers:
            if layer.id == layer_id:
                return layer
        raise KeyError(layer_id)

    def has_weights(self):
        return all(set(l.weight_shapes()) <= set(l.weights) for l in self.layers)


def structurally_equal(a: NetworkGraph, b: NetworkGraph, with_weights=True) -> bool:
    if (a.input_spec != b.input_spec or a.num_classes != b.num_classes
            or len(a.layers) != len(b.layers)):
        return False
    for la, lb in zip(a.layers, b.layers):
        if la.id != lb.id or la.kind != lb.kind or la.params != lb.params:
            return False
        if with_weights:
            if set(la.weights) != set(lb.weights):
                return False
            for key in la.weights:
                wa, wb = np.asarray(la.weights[key]), np.asarray(lb.weights[key])
                if wa.shape != wb.shape or wa.tobytes() != wb.tobytes():
                    return False
    return True


def network_id(net: NetworkGraph) -> str:
    h = hashlib.sha1()
    h.update(repr((net.name, net.input_spec, net.num_classes)).encode())
    for layer in net.layers:
        h.update(repr((layer.id, layer.kind, sorted(layer.params.items()))).encode())
        for key in sorted(layer.weights):
            h.update(key.encode())
            h.update(np.ascontiguousarray(layer.weights[key], dtype="<f4").tobytes())
    return h.hexdigest()[:12]


# =========================================================
# 📐 [Shape inference]
# =========================================================
@dataclass
class LayerShape:
    layer_id: str
    kind: str
    in_dims: List[int]
    out_dims: List[int]


@dataclass
class ShapeReport:
    input_dims: List[int]
    output_dims: List[int]
    layers: List[LayerShape]
    shrink: Tuple[int, int]

    def dims_of(self, layer_id):
        for entry in self.layers:
            if entry.layer_id == layer_id:
                return entry
        raise KeyError(layer_id)


def layer_out_dims(layer: LayerSpec, dims: List[int]) -> List[int]:
    """한 레이어의 출력 dims (residual 마커 제외)"""
    kind, p = layer.kind, layer.params
    if kind == CONV2D:
        if len(dims) != 3:
            raise ShapeError(f"'{layer.id}': Conv2d needs a rank-3 input, got {dims}", axis="rank")
        _match_channels(layer, dims[0], p["in_channels"])
        oh, ow = _spatial(layer, dims[1:], (p["kh"], p["kw"]), (p["stride_h"], p["stride_w"]), p["pad"])
        return [int(p["out_channels"]), oh, ow]
    if kind == CONV3D:
        if len(dims) != 4:
            raise ShapeError(f"'{layer.id}': Conv3d needs a rank-4 input, got {dims}", axis="rank")
        _match_channels(layer, dims[0], p["in_channels"])
        if dims[1] + 2 * p["pad_d"] < p["kd"]:
            raise KernelTooLargeError(
                f"'{layer.id}': kernel exceeds input on axis 'spectral' ({dims[1]} bands, kd={p['kd']})",
                axis="spectral")
        od = conv_out_dim(dims[1], p["kd"], p["stride_d"], p["pad_d"])
        oh, ow = _spatial(layer, dims[2:], (p["kh"], p["kw"]), (p["stride_h"], p["stride_w"]), p["pad_hw"])
        return [int(p["out_channels"]), od, oh, ow]
    if kind == BATCHNORM:
        _match_channels(layer, dims[0], p["channels"])
        return list(dims)
    if kind in (RELU, SOFTMAX):
        return list(dims)
    if kind == AVGPOOL2D:
        oh, ow = _spatial(layer, dims[-2:], (p["k"], p["k"]), (p["stride"], p["stride"]), p["pad"])
        return list(dims[:-2]) + [oh, ow]
    if kind == GLOBAL_AVGPOOL:
        return list(dims[:-2]) + [1, 1]
    if kind == COLLAPSE_SPECTRAL:
        if len(dims) != 4:
            raise ShapeError(f"'{layer.id}': CollapseSpectral needs a rank-4 input, got {dims}", axis="rank")
        return [dims[0] * dims[1], dims[2], dims[3]]
    if kind == FC:
        flat = int(np.prod(dims))
        if flat != p["in_features"]:
            raise ShapeError(
                f"'{layer.id}': Fc expects {p['in_features']} input features, incoming {dims} gives {flat}",
                axis="features")
        return [int(p["out_features"]), 1, 1]
    raise TppiError(f"'{layer.id}': no shape rule for {kind}")


def _match_channels(layer, got, expected):
    if got != expected:
        raise ShapeError(f"'{layer.id}': expects {expected} channels, incoming has {got}", axis="channels")


def _spatial(layer, hw, kernel, strides, pad):
    out = []
    for size, k, s, name in zip(hw, kernel, strides, ("rows", "cols")):
        o = conv_out_dim(size, k, s, pad)
        if size + 2 * pad < k or o < 1:
            raise ReceptiveFieldError(
                f"input smaller than receptive field at layer '{layer.id}' ({name}: {size} < kernel {k})",
                layer_id=layer.id)
        out.append(o)
    return out


def walk_shapes(net: NetworkGraph, in_dims: List[int]):
    """(layer, in_dims, out_dims, skip_dims) 를 순서대로 생성. skip_dims 는 ResidualEnd 에서만 채워짐"""
    dims = list(in_dims)
    stack = []
    for layer in net.layers:
        if layer.kind == RESIDUAL_BEGIN:
            stack.append(list(dims))
            yield layer, dims, list(dims), None
            continue
        if layer.kind == RESIDUAL_END:
            skip = stack.pop()
            residual_crop(layer, skip, dims)
            yield layer, dims, list(dims), skip
            continue
        out = layer_out_dims(layer, dims)
        yield layer, dims, out, None
        dims = out


def residual_crop(layer, skip, dims):
    """skip 을 branch 출력 크기에 맞추기 위한 (top, left) 중앙 crop 크기"""
    if len(skip) != len(dims) or skip[:-2] != dims[:-2]:
        raise ShapeError(f"'{layer.id}': residual join mismatch, skip {skip} vs branch {dims}", axis="channels")
    dh, dw = skip[-2] - dims[-2], skip[-1] - dims[-1]
    if dh < 0 or dw < 0 or dh % 2 or dw % 2:
        raise ShapeError(f"'{layer.id}': residual spatial shrink ({dh},{dw}) must be even and >= 0", axis="rows")
    return dh // 2, dw // 2


def shape_infer(net: NetworkGraph, input_h: int, input_w: int) -> ShapeReport:
    in_dims = net.input_spec.dims(input_h, input_w)
    entries = []
    out = in_dims
    for layer, d_in, d_out, _ in walk_shapes(net, in_dims):
        entries.append(LayerShape(layer.id, layer.kind, list(d_in), list(d_out)))
        out = d_out
    return ShapeReport(list(in_dims), list(out), entries, (input_h - out[-2], input_w - out[-1]))


def check_network(net: NetworkGraph) -> ShapeReport:
    """구조 검증: m*m 입력에서 shape inference 성공 + 최종 feature 수 == C"""
    report = shape_infer(net, net.m, net.m)
    out = report.output_dims
    if len(out) != 3 or out[0] != net.num_classes:
        raise ShapeError(f"final output {out} does not carry {net.num_classes} class channels", axis="channels")
    return report


# =========================================================
# 📏 [TPPI rules / receptive field]
# =========================================================
@dataclass(frozen=True)
class Violation:
    layer_id: str
    rule: int
    message: str


def validate_tppi(net: NetworkGraph) -> List[Violation]:
    """
    (1) No FC  (2) No spatial down-sample  (3) No spatial zero padding.
    (1)(2) 만으로도 임의 크기 입력은 받지만, patch 모드와 image 모드 결과가 픽셀 단위로
    일치하려면 (3) 이 필요함: 공간 padding 이 있으면 patch 경계의 0 이 이웃 픽셀 값을 대신해 두 모드가 갈라짐.
    Conv3d 의 spectral stride / spectral pad 는 공간 기하를 바꾸지 않으므로 허용.
    """
    violations = []
    for layer in net.layers:
        if layer.kind == FC:
            violations.append(Violation(layer.id, RULE_NO_FC, "fully connected layer"))
        elif layer.kind == GLOBAL_AVGPOOL:
            violations.append(Violation(layer.id, RULE_NO_FC, "global pooling fixes the input size"))
        if any(s > 1 for s in layer.spatial_stride):
            violations.append(Violation(layer.id, RULE_NO_DOWNSAMPLE,
                                        f"spatial stride {layer.spatial_stride}"))
        if layer.spatial_pad > 0:
            violations.append(Violation(layer.id, RULE_NO_SPATIAL_PAD,
                                        f"spatial zero padding {layer.spatial_pad}"))
    return violations


def receptive_field(net: NetworkGraph) -> int:
    violations = validate_tppi(net)
    if violations:
        raise TppiViolationError(violations)
    rf_h = 1 + sum(layer.spatial_kernel[0] - 1 for layer in net.layers)
    rf_w = 1 + sum(layer.spatial_kernel[1] - 1 for layer in net.layers)
    if rf_h != rf_w:
        raise ReceptiveFieldError(f"non-square receptive field {rf_h}x{rf_w}")
    report = shape_infer(net, rf_h, rf_w)
    if report.output_dims[-2:] != [1, 1]:
        raise ReceptiveFieldError(f"receptive field {rf_h} does not reduce to 1x1 ({report.output_dims})")
    if rf_h != net.m:
        raise ReceptiveFieldError(f"computed receptive field {rf_h} != declared m {net.m}")
    return rf_h


# =========================================================
# 💰 [FLOPs cost model] (MAC 단위)
# =========================================================
@dataclass
class LayerFlops:
    layer_id: str
    kind: str
    image_macs: Optional[int]
    patch_macs_per_pixel: int
    patch_macs_total: int
    is_conv: bool

    @property
    def ratio(self) -> Optional[Fraction]:
        if not self.is_conv or not self.image_macs:
            return None
        return Fraction(self.patch_macs_total, self.image_macs)


@dataclass
class FlopsReport:
    image_h: int
    image_w: int
    m: int
    mode: str
    model: str
    count_adds: bool
    layers: List[LayerFlops]

    @property
    def image_total(self):
        return sum(l.image_macs or 0 for l in self.layers if l.is_conv)

    @property
    def patch_total(self):
        return sum(l.patch_macs_total for l in self.layers if l.is_conv)

    @property
    def patch_per_pixel(self):
        return sum(l.patch_macs_per_pixel for l in self.layers if l.is_conv)

    @property
    def elementwise_image(self):
        return sum(l.image_macs or 0 for l in self.layers if not l.is_conv)

    @property
    def elementwise_patch(self):
        return sum(l.patch_macs_total for l in self.layers if not l.is_conv)

    @property
    def ratio(self) -> Optional[Fraction]:
        if self.mode != "both" or not self.image_total:
            return None
        return Fraction(self.patch_total, self.image_total)

    def to_dict(self):
        def _frac(x):
            return None if x is None else (int(x) if x.denominator == 1 else float(x))
        return {
            "image_h": self.image_h, "image_w": self.image_w, "m": self.m, "mode": self.mode,
            "model": self.model, "count_adds": self.count_adds,
            "image_total": self.image_total if self.mode != "patch" else None,
            "patch_total": self.patch_total if self.mode != "image" else None,
            "patch_per_pixel": self.patch_per_pixel,
            "elementwise_image": self.elementwise_image, "elementwise_patch": self.elementwise_patch,
            "ratio": _frac(self.ratio), "m_squared": self.m * self.m,
            "layers": [{
                "id": l.layer_id, "kind": l.kind, "conv": l.is_conv,
                "image_macs": l.image_macs, "patch_macs_per_pixel": l.patch_macs_per_pixel,
                "patch_macs_total": l.patch_macs_total, "ratio": _frac(l.ratio),
            } for l in self.layers],
        }


def _macs_per_position(layer):
    p = layer.params
    if layer.kind == CONV2D:
        return p["in_channels"] * p["kh"] * p["kw"] * p["out_channels"]
    if layer.kind == CONV3D:
        return p["in_channels"] * p["kd"] * p["kh"] * p["kw"] * p["out_channels"]
    if layer.kind == FC:
        return p["in_features"] * p["out_features"]
    return None


def _elementwise_per_element(layer):
    if layer.kind == AVGPOOL2D:
        return layer.p("k") ** 2
    if layer.kind in (BATCHNORM, RELU, SOFTMAX, RESIDUAL_END):
        return 1
    return 0


def _layer_cost(layer, d_in, d_out, spatial_positions):
    """spatial_positions: 이 레이어에 과금할 공간 위치 수 (None 이면 d_out 의 실제 공간 크기 사용)"""
    per_pos = _macs_per_position(layer)
    spatial = d_out[-1] * d_out[-2] if spatial_positions is None else spatial_positions
    if per_pos is not None:
        spectral = d_out[1] if layer.kind == CONV3D else 1
        if layer.kind == FC:
            spatial = 1
        return True, spatial * spectral * per_pos
    if layer.kind == GLOBAL_AVGPOOL:
        return False, int(np.prod(d_in))
    non_spatial = int(np.prod(d_out[:-2]))
    return False, spatial * non_spatial * _elementwise_per_element(layer)


def count_flops(net: NetworkGraph, image_h: int, image_w: int, mode="both", model="nominal",
                count_adds=False) -> FlopsReport:
    """
    model="nominal": 경계 무시 모델. image-mode 는 레이어마다 H*W 위치, patch-mode 는 픽셀당 m*m 위치를 과금
                   -> stride-1 TPPI 망의 conv 레이어 비율은 정확히 m^2.
    model="exact": 실제 shape inference 위치 수. image-mode 는 (H+m-1)x(W+m-1) 패딩 입력 기준.
    """
    if mode not in ("both", "patch", "image"):
        raise TppiError(f"unknown flops mode '{mode}'")
    if model not in ("nominal", "exact"):
        raise TppiError(f"unknown flops model '{model}'")
    m = net.m
    pixels = image_h * image_w
    factor = 2 if count_adds else 1

    if mode != "patch":
        violations = [v for v in validate_tppi(net) if v.rule in (RULE_NO_FC, RULE_NO_DOWNSAMPLE)]
        if violations:
            raise TppiViolationError(violations)
        # 사전 조건: image 크기에서 shape inference 성공
        shape_infer(net, image_h, image_w)

    patch_walk = list(walk_shapes(net, net.input_spec.dims(m, m)))
    if model == "exact" and mode != "patch":
        image_walk = list(walk_shapes(net, net.input_spec.dims(image_h + m - 1, image_w + m - 1)))
    else:
        image_walk = patch_walk

    layers = []
    for (layer, p_in, p_out, _), (_, i_in, i_out, _) in zip(patch_walk, image_walk):
        if layer.kind in (RESIDUAL_BEGIN, COLLAPSE_SPECTRAL):
            continue
        if model == "nominal":
            is_conv, per_pixel = _layer_cost(layer, p_in, p_out, m * m)
            _, image = _layer_cost(layer, i_in, i_out, pixels)
        else:
            is_conv, per_pixel = _layer_cost(layer, p_in, p_out, None)
            _, image = _layer_cost(layer, i_in, i_out, None)
        if layer.kind == FC or mode == "patch":
            image = None
        layers.append(LayerFlops(
            layer.id, layer.kind,
            None if image is None else image * factor,
            per_pixel * factor,
            per_pixel * pixels * factor,
            is_conv,
        ))
    return FlopsReport(image_h, image_w, m, mode, model, count_adds, layers)


# =========================================================
# 🏗️ [Builder / presets]
# =========================================================
class NetworkBuilder:
    """채널 수를 따라가며 레이어 id 를 자동으로 붙이는 순차 빌더"""

    def __init__(self, bands, m, rank=3, name="net"):
        self.input_spec = InputSpec(bands=bands, m=m, rank=rank)
        self.name = name
        self.layers = []
        self.channels = bands if rank == 3 else 1
        self.depth = bands if rank == 4 else None
        self._counts = {}

    def _id(self, kind):
        n = self._counts.get(kind, 0) + 1
        self._counts[kind] = n
        return f"{kind.lower()}_{n}"

    def add(self, kind, **params):
        layer = LayerSpec(self._id(kind), kind, params)
        self.layers.append(layer)
        return layer

    def conv2d(self, out, k=3, stride=1, pad=0, bias=True):
        self.add(CONV2D, in_channels=self.channels, out_channels=out, kh=k, kw=k,
                 stride_h=stride, stride_w=stride, pad=pad, bias=bias)
        self.channels = out
        return self

    def conv3d(self, out, kd=7, k=1, stride_d=1, stride=1, pad_d=0, pad_hw=0, bias=True):
        self.add(CONV3D, in_channels=self.channels, out_channels=out, kd=kd, kh=k, kw=k,
                 stride_d=stride_d, stride_h=stride, stride_w=stride, pad_d=pad_d, pad_hw=pad_hw, bias=bias)
        self.channels = out
        self.depth = conv_out_dim(self.depth, kd, stride_d, pad_d)
        return self

    def bn(self):
        self.add(BATCHNORM, channels=self.channels, epsilon=Config.BN_EPSILON)
        return self

    def relu(self):
        self.add(RELU)
        return self

    def avgpool(self, k, stride=1, pad=0):
        self.add(AVGPOOL2D, k=k, stride=stride, pad=pad)
        return self

    def global_pool(self):
        self.add(GLOBAL_AVGPOOL)
        return self

    def collapse(self):
        self.add(COLLAPSE_SPECTRAL)
        self.channels *= self.depth
        self.depth = None
        return self

    def fc(self, in_features, out, bias=True):
        self.add(FC, in_features=in_features, out_features=out, bias=bias)
        self.channels = out
        return self

    def begin(self):
        self.add(RESIDUAL_BEGIN)
        return self

    def end(self):
        self.add(RESIDUAL_END)
        return self

    def softmax(self):
        self.add(SOFTMAX)
        return self

    def build(self, num_classes):
        return NetworkGraph(list(self.layers), self.input_spec, num_classes, self.name)


def _spatial_chain(b: NetworkBuilder, width, m):
    """3x3 pad-0 conv 를 (m-1)/2 개 쌓되, 두 개씩 잔차 블록으로 묶습니다"""
    remaining = (m - 1) // 2
    if remaining == 0:
        b.conv2d(width, k=1).bn().relu()
        return
    b.conv2d(width, k=3).bn().relu()
    remaining -= 1
    while remaining >= 2:
        b.begin().conv2d(width).bn().relu().conv2d(width).bn().end().relu()
        remaining -= 2
    if remaining:
        b.conv2d(width).bn().relu()


def ssrn_like(bands=200, num_classes=16, m=7, width=24, spectral_width=128, spectral_kernel=7):
    """
    SSRN 유사 프리셋 (FC head 만 TPPI 와 다름).
    bands=200 이면 conv3d 1->24, kd=7, stride_d=2 -> spectral 97.
    """
    _check_odd(m)
    kd = min(spectral_kernel, bands)
    rk = kd if kd % 2 else max(1, kd - 1)      # 잔차 블록은 홀수 kernel + same pad 로 spectral 길이 유지
    b = NetworkBuilder(bands, m, rank=4, name=f"ssrn-like-m{m}")
    b.conv3d(width, kd=kd, stride_d=2 if bands > kd else 1).bn().relu()
    b.begin().conv3d(width, kd=rk, pad_d=rk // 2).bn().relu() \
        .conv3d(width, kd=rk, pad_d=rk // 2).bn().end().relu()
    b.conv3d(spectral_width, kd=b.depth).bn().relu()
    b.collapse()
    _spatial_chain(b, width, m)
    b.global_pool()
    b.fc(b.channels, num_classes)
    b.softmax()
    return b.build(num_classes)


def presnet_like(bands=200, num_classes=16, m=7, width=32, bottleneck=8):
    """
    pResNet 유사 프리셋: 2-D stem, bottleneck 잔차 블록, stride-2 transition, GAP + FC.
    transform 시 stride/pad 제거가 필요하므로 retrain_required = True.
    stride/pad 제거 후 3x3 conv 개수가 정확히 (m-1)/2 가 되도록 구성합니다.
    """
    _check_odd(m)
    if m < 5:
        raise TppiError("presnet-like preset needs m >= 5")
    budget = (m - 1) // 2 - 2          # stem + transition 을 뺀 3x3 conv 수
    b = NetworkBuilder(bands, m, rank=3, name=f"presnet-like-m{m}")
    b.conv2d(width, k=3).bn().relu()
    b.begin().conv2d(bottleneck, k=1).bn().relu()
    if budget > 0:
        b.conv2d(bottleneck, k=3, pad=1).bn().relu()
        budget -= 1
    b.conv2d(width, k=1).bn().end().relu()
    for _ in range(budget):
        b.conv2d(width, k=3).bn().relu()
    # 다운샘플 transition
    b.conv2d(width, k=3, stride=2, pad=1).bn().relu()
    b.global_pool()
    b.fc(width, num_classes)
    b.softmax()
    return b.build(num_classes)


PRESETS = {"ssrn-like": ssrn_like, "presnet-like": presnet_like}


def make_preset(name, **kwargs):
    try:
        factory = PRESETS[name]
    except KeyError:
        raise TppiError(f"unknown preset '{name}' (expected one of {sorted(PRESETS)})")
    return factory(**kwargs)


def _check_odd(m):
    if m < 1 or m % 2 == 0:
        raise TppiError(f"patch size m must be a positive odd number, got {m}")


# =========================================================
# 🎲 [Weight init] He-style (fan-in)
# =========================================================
def init_network(net: NetworkGraph, seed=0, overwrite=False) -> NetworkGraph:
    """비어 있는 가중치를 seed 고정 He 초기화로 채운 새 그래프 반환"""
    rng = np.random.default_rng(seed)
    out = net.copy()
    for layer in out.layers:
        for key, shape in layer.weight_shapes().items():
            if key in layer.weights and not overwrite:
                continue
            if key == "weight":
                fan_in = int(np.prod(shape[1:]))
                arr = rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)
            elif key in ("gamma", "running_var"):
                arr = np.ones(shape)
            else:
                arr = np.zeros(shape)
            layer.weights[key] = arr.astype(np.float32)
    return out
