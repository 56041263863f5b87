# engine/inference.py
"""
[Inference Engine]
두 가지 예측 방식:
  - TPPP (patch-wise): 픽셀마다 m*m*B 이웃을 잘라 한 장씩(배치로 묶어) 분류
  - TPPI (image / tiled): 같은 가중치를 전체 영상에 fully-convolutional 하게 적용
경계 처리는 두 방식 모두 같은 mirror padding 을 쓰므로 경계 픽셀까지 동등성이 성립합니다.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import Config
from engine.errors import TppiError, ShapeError, TppiViolationError
from engine.network import (
    NetworkGraph, network_id, validate_tppi, residual_crop,
    CONV2D, CONV3D, BATCHNORM, RELU, AVGPOOL2D, GLOBAL_AVGPOOL, COLLAPSE_SPECTRAL, FC,
    RESIDUAL_BEGIN, RESIDUAL_END, SOFTMAX,
)
from engine.tensor import (
    working_dtype, conv_batch, batchnorm_batch, relu_batch, add_batch, avgpool_batch,
    global_avgpool_batch, collapse_spectral_batch, crop_center_batch, fc_batch, pad_batch,
)
from infra.utils import get_logger, log_op_call, run_ordered

logger = get_logger("Inference")


# =========================================================
# 📦 [Domain Types]
# =========================================================
@dataclass
class ClassificationMap:
    height: int
    width: int
    class_of: np.ndarray                      # (H, W) int, 1..C (0 = 예측하지 않은 픽셀)
    logits: Optional[np.ndarray] = None       # (C, H, W)
    provenance: dict = field(default_factory=dict)

    def probabilities(self):
        if self.logits is None:
            raise TppiError("map was produced without retained logits")
        return softmax(self.logits.astype(np.float64), axis=0)


@dataclass
class EquivalenceReport:
    max_abs_logit_diff: float
    argmax_disagreements: int
    disagreement_pixels: List[Tuple[int, int]]
    pixels_compared: int
    tolerance: float = 0.0
    min_margin_at_disagreement: Optional[float] = None

    @property
    def within_tolerance(self):
        return self.max_abs_logit_diff <= self.tolerance

    def to_dict(self):
        return {
            "max_abs_logit_diff": self.max_abs_logit_diff,
            "argmax_disagreements": self.argmax_disagreements,
            "disagreement_pixels": [list(p) for p in self.disagreement_pixels],
            "pixels_compared": self.pixels_compared,
            "tolerance": self.tolerance,
            "within_tolerance": self.within_tolerance,
            "min_margin_at_disagreement": self.min_margin_at_disagreement,
        }


def softmax(x, axis=0):
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


# =========================================================
# ▶️ [Graph executor]
# =========================================================
def _weights(layer, key, required=True):
    if key not in layer.weights:
        if required:
            raise TppiError(f"layer '{layer.id}' has no '{key}' weights (initialise or load the network first)")
        return None
    return layer.weights[key]


def apply_layer(layer, x, stack, precision="float32", algo="direct", include_softmax=False):
    kind, p = layer.kind, layer.params
    if kind == CONV2D:
        return conv_batch(x, _weights(layer, "weight"), _weights(layer, "bias", p["bias"]),
                          strides=(p["stride_h"], p["stride_w"]), pads=(p["pad"], p["pad"]),
                          precision=precision, algo=algo)
    if kind == CONV3D:
        return conv_batch(x, _weights(layer, "weight"), _weights(layer, "bias", p["bias"]),
                          strides=(p["stride_d"], p["stride_h"], p["stride_w"]),
                          pads=(p["pad_d"], p["pad_hw"], p["pad_hw"]), precision=precision, algo=algo)
    if kind == BATCHNORM:
        return batchnorm_batch(x, _weights(layer, "gamma"), _weights(layer, "beta"),
                               _weights(layer, "running_mean"), _weights(layer, "running_var"),
                               p["epsilon"], precision=precision)
    if kind == RELU:
        return relu_batch(x)
    if kind == AVGPOOL2D:
        return avgpool_batch(x, p["k"], p["k"], p["stride"], p["pad"])
    if kind == GLOBAL_AVGPOOL:
        return global_avgpool_batch(x)
    if kind == COLLAPSE_SPECTRAL:
        return collapse_spectral_batch(x)
    if kind == FC:
        out = fc_batch(x, _weights(layer, "weight"), _weights(layer, "bias", p["bias"]), precision=precision)
        return out.reshape(out.shape + (1, 1))
    if kind == RESIDUAL_BEGIN:
        stack.append(x)
        return x
    if kind == RESIDUAL_END:
        skip = stack.pop()
        top, left = residual_crop(layer, list(skip.shape[1:]), list(x.shape[1:]))
        if top or left:
            skip = crop_center_batch(skip, top, top, left, left)
        return add_batch(x, skip)
    if kind == SOFTMAX:
        return softmax(x, axis=1).astype(x.dtype, copy=False) if include_softmax else x
    raise TppiError(f"layer '{layer.id}': no executor for {kind}")


def forward(net: NetworkGraph, x, precision="float32", algo="direct", include_softmax=False, stop_at=None):
    """
    x: (N, B, H, W) (rank-3 입력) 또는 (N, 1, B, H, W) (rank-4 입력).
    stop_at: 해당 인덱스 레이어 직전의 activation 을 반환 (BN warm-up 용)
    """
    arr = np.asarray(x, dtype=working_dtype(precision))
    stack = []
    for idx, layer in enumerate(net.layers):
        if stop_at is not None and idx == stop_at:
            return arr
        arr = apply_layer(layer, arr, stack, precision, algo, include_softmax)
    return arr


def cube_input(net: NetworkGraph, cube_data):
    """(B, H, W) -> 네트워크 입력 배치 (N=1)"""
    if cube_data.shape[0] != net.bands:
        raise ShapeError(f"cube has {cube_data.shape[0]} bands, network expects {net.bands}", axis="bands")
    arr = cube_data[None]
    return arr[:, None] if net.input_spec.rank == 4 else arr


def _check_m(net):
    if net.m % 2 == 0:
        raise TppiError(f"patch size m={net.m} is even; centring a patch on a pixel needs an odd m (use m±1)")


def _cube_array(cube):
    return np.asarray(getattr(cube, "data", cube))


def _provenance(net, mode, padded, **extra):
    prov = {"mode": mode, "padded": padded, "net_id": network_id(net), "net_name": net.name}
    prov.update(extra)
    return prov


# =========================================================
# 🧩 [Patch-wise (TPPP)]
# =========================================================
def pixel_list(height, width, pixels="all", gt=None):
    """'all' | 'labeled-only' | (H, W) bool mask -> (rows, cols)"""
    if isinstance(pixels, str):
        if pixels == "all":
            mask = np.ones((height, width), dtype=bool)
        elif pixels == "labeled-only":
            if gt is None:
                raise TppiError("pixels='labeled-only' needs a ground truth")
            mask = np.asarray(getattr(gt, "labels", gt)) > 0
        else:
            raise TppiError(f"unknown pixel selection '{pixels}'")
    else:
        mask = np.asarray(pixels, dtype=bool)
    if mask.shape != (height, width):
        raise ShapeError(f"pixel mask {mask.shape} does not match cube {height}x{width}", axis="rows")
    return np.nonzero(mask)


def extract_patches(padded, rows, cols, m):
    """padded: (B, H+m-1, W+m-1) -> (N, B, m, m). 픽셀 (r, c) 의 패치 = padded[:, r:r+m, c:c+m]"""
    windows = sliding_window_view(padded, (m, m), axis=(1, 2))     # (B, H, W, m, m)
    return np.ascontiguousarray(np.moveaxis(windows[:, rows, cols], 0, 1))


@log_op_call("predict_patchwise")
def predict_patchwise(net: NetworkGraph, cube, pixels="all", batch=None, gt=None, precision="float32",
                      algo="direct", workers=None, retain_logits=True, border=None):
    _check_m(net)
    data = _cube_array(cube)
    bands, height, width = data.shape
    if bands != net.bands:
        raise ShapeError(f"cube has {bands} bands, network expects {net.bands}", axis="bands")
    batch = batch or Config.PREDICT_BATCH
    border = border or Config.BORDER_MODE
    r = (net.m - 1) // 2
    padded = pad_batch(data[None], r, r, r, r, border)[0].astype(working_dtype(precision), copy=False)
    rows, cols = pixel_list(height, width, pixels, gt)

    chunks = [(start, min(start + batch, len(rows))) for start in range(0, len(rows), batch)]

    def _run(chunk):
        lo, hi = chunk
        patches = extract_patches(padded, rows[lo:hi], cols[lo:hi], net.m)
        if net.input_spec.rank == 4:
            patches = patches[:, None]
        out = forward(net, patches, precision, algo)
        return out.reshape(out.shape[0], out.shape[1])

    results = run_ordered(_run, chunks, workers)
    logits_flat = np.concatenate(results, axis=0) if results else np.zeros((0, net.num_classes))

    class_of = np.zeros((height, width), dtype=np.int32)
    class_of[rows, cols] = np.argmax(logits_flat, axis=1) + 1 if len(rows) else 0
    logits = None
    if retain_logits:
        logits = np.zeros((net.num_classes, height, width), dtype=logits_flat.dtype)
        logits[:, rows, cols] = logits_flat.T
    return ClassificationMap(height, width, class_of, logits,
                             _provenance(net, "patch", True, pixels=len(rows), border=border))


# =========================================================
# 🖼️ [Image-wise (TPPI)]
# =========================================================
def _require_tppi(net):
    violations = validate_tppi(net)
    if violations:
        raise TppiViolationError(violations)


def _image_input(net, cube, pad_to_full, border, precision):
    _check_m(net)
    _require_tppi(net)
    data = _cube_array(cube)
    bands, height, width = data.shape
    if height < net.m or width < net.m:
        raise ShapeError(f"cube {height}x{width} is smaller than the patch size m={net.m}", axis="rows")
    arr = data[None]
    if pad_to_full:
        r = (net.m - 1) // 2
        arr = pad_batch(arr, r, r, r, r, border)
    return cube_input(net, arr[0].astype(working_dtype(precision), copy=False))


def _to_map(out, net, mode, padded, retain_logits, **extra):
    logits = out[0]
    class_of = (np.argmax(logits, axis=0) + 1).astype(np.int32)
    h, w = class_of.shape
    return ClassificationMap(h, w, class_of, logits if retain_logits else None,
                             _provenance(net, mode, padded, **extra))


@log_op_call("predict_image")
def predict_image(net: NetworkGraph, cube, pad_to_full=True, precision="float32", algo="direct",
                  retain_logits=True, border=None):
    border = border or Config.BORDER_MODE
    x = _image_input(net, cube, pad_to_full, border, precision)
    out = forward(net, x, precision, algo)
    return _to_map(out, net, "image", pad_to_full, retain_logits, border=border)


def tile_origins(size, tile, step):
    """마지막 타일은 끝에 맞춰 정렬 (겹치는 출력은 비트 단위로 같은 값)"""
    if size <= tile:
        return [0]
    origins = list(range(0, size - tile + 1, step))
    if origins[-1] != size - tile:
        origins.append(size - tile)
    return origins


@log_op_call("predict_tiled")
def predict_tiled(net: NetworkGraph, cube, tile, pad_to_full=False, precision="float32", algo="direct",
                  workers=None, retain_logits=True, border=None):
    if tile < net.m:
        raise ShapeError(f"tile {tile} is smaller than the patch size m={net.m}", axis="tile")
    border = border or Config.BORDER_MODE
    x = _image_input(net, cube, pad_to_full, border, precision)
    in_h, in_w = x.shape[-2:]
    out_h, out_w = in_h - net.m + 1, in_w - net.m + 1
    step = tile - net.m + 1
    boxes = [(y, x0) for y in tile_origins(in_h, tile, step) for x0 in tile_origins(in_w, tile, step)]

    def _run(box):
        y, x0 = box
        return forward(net, x[..., y:y + tile, x0:x0 + tile], precision, algo)[0]

    results = run_ordered(_run, boxes, workers)
    logits = np.zeros((net.num_classes, out_h, out_w), dtype=working_dtype(precision))
    # 고정된 타일 순서로 stitch
    for (y, x0), part in zip(boxes, results):
        logits[:, y:y + part.shape[1], x0:x0 + part.shape[2]] = part
    return _to_map(logits[None], net, "tiled", pad_to_full, retain_logits, tile=tile, border=border)


# =========================================================
# ⚖️ [Equivalence verifier]
# =========================================================
@log_op_call("verify_equivalence")
def verify_equivalence(net_tppi: NetworkGraph, cube, tolerance=None, precision="float32",
                       image_algo="direct", workers=None, batch=None, cap=None):
    """
    patch-wise(모든 픽셀, mirror pad) vs predict_image(pad_to_full=True).
    image_algo="im2col" 이면 누적 순서가 달라지므로 tolerance 기반 비교가 됩니다.
    """
    _require_tppi(net_tppi)
    tolerance = Config.EQUIVALENCE_TOLERANCE if tolerance is None else tolerance
    cap = Config.DISAGREEMENT_CAP if cap is None else cap

    patch = predict_patchwise(net_tppi, cube, "all", batch=batch, precision=precision, workers=workers)
    image = predict_image(net_tppi, cube, pad_to_full=True, precision=precision, algo=image_algo)

    diff = np.abs(patch.logits.astype(np.float64) - image.logits.astype(np.float64))
    disagree = patch.class_of != image.class_of
    rows, cols = np.nonzero(disagree)
    margin = None
    if len(rows):
        top2 = np.sort(patch.logits[:, rows, cols].astype(np.float64), axis=0)[-2:]
        margin = float(np.min(top2[1] - top2[0]))

    report = EquivalenceReport(
        max_abs_logit_diff=float(diff.max()) if diff.size else 0.0,
        argmax_disagreements=int(disagree.sum()),
        disagreement_pixels=[(int(r), int(c)) for r, c in zip(rows[:cap], cols[:cap])],
        pixels_compared=int(disagree.size),
        tolerance=float(tolerance),
        min_margin_at_disagreement=margin,
    )
    if report.argmax_disagreements:
        logger.warning(f"⚠️ {report.argmax_disagreements} argmax disagreements "
                       f"(max |diff| {report.max_abs_logit_diff:.3g})")
    else:
        logger.info(f"✅ patch/image equivalence on {report.pixels_compared} pixels "
                    f"(max |diff| {report.max_abs_logit_diff:.3g})")
    return report
