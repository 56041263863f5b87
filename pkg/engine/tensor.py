# engine/tensor.py
"""
[Tensor Core]
- Dense tensor 컨테이너 + 결정적(deterministic) 수치 커널
- 모든 커널은 내부적으로 배치 배열 (N, C, [D,] H, W) 위에서 동작합니다.
- 축 순서: rank-3 = [channels, rows, cols], rank-4 = [channels, spectral, rows, cols]

누적 순서 (direct 알고리즘):
  출력 원소 하나당 in-channel -> (spectral) -> row -> col 순서로 순차 누적한 뒤 bias 를 더합니다.
  누적은 원소별(elementwise) 곱/합으로만 수행하므로, 같은 출력 원소의 합 순서는
  이미지 크기 / 배치 크기 / 워커 수와 무관하게 동일합니다. (patch-mode == image-mode 비트 일치의 근거)
"""
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from config import Config
from engine.errors import ShapeError, KernelTooLargeError, TppiError

ROLE_2D = "feature-map-2d"
ROLE_3D = "feature-map-3d"
PRECISIONS = {"float32": np.float32, "float64": np.float64}
ALGOS = ("direct", "im2col")


def working_dtype(precision="float32"):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise TppiError(f"unknown precision '{precision}' (expected one of {sorted(PRECISIONS)})")


def _check_finite(arr, where):
    if Config.DEBUG_CHECKS and not np.all(np.isfinite(arr)):
        bad = int(arr.size - np.count_nonzero(np.isfinite(arr)))
        raise TppiError(f"{where}: {bad} non-finite values in kernel output")
    return arr


# =========================================================
# 📦 [Domain Types]
# =========================================================
@dataclass(frozen=True, eq=False)
class Tensor:
    data: np.ndarray
    role: str = ""

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim not in (3, 4):
            raise ShapeError(f"tensor rank must be 3 or 4, got {arr.ndim}", axis="rank")
        if any(d < 1 for d in arr.shape):
            raise ShapeError(f"all dims must be >= 1, got {list(arr.shape)}", axis="dims")
        role = self.role or (ROLE_2D if arr.ndim == 3 else ROLE_3D)
        if (role == ROLE_2D) != (arr.ndim == 3):
            raise ShapeError(f"role '{role}' does not match rank {arr.ndim}", axis="rank")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "role", role)

    @property
    def dims(self):
        return list(self.data.shape)

    @property
    def rank(self):
        return self.data.ndim

    @property
    def channels(self):
        return self.data.shape[0]


@dataclass
class ConvKernel2d:
    weights: np.ndarray                     # [out, in, kh, kw]
    bias: Optional[np.ndarray] = None       # [out]
    stride_h: int = 1
    stride_w: int = 1
    pad: int = 0                            # symmetric zero pad

    def __post_init__(self):
        if np.ndim(self.weights) != 4:
            raise ShapeError("conv2d weights must be [out, in, kh, kw]", axis="weights")
        _check_geometry((self.stride_h, self.stride_w), (self.pad,))
        _check_bias(self.bias, self.out_channels)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kh(self):
        return self.weights.shape[2]

    @property
    def kw(self):
        return self.weights.shape[3]


@dataclass
class ConvKernel3d:
    weights: np.ndarray                     # [out, in, kd, kh, kw]
    bias: Optional[np.ndarray] = None
    stride_d: int = 1
    stride_h: int = 1
    stride_w: int = 1
    pad_d: int = 0
    pad_hw: int = 0

    def __post_init__(self):
        if np.ndim(self.weights) != 5:
            raise ShapeError("conv3d weights must be [out, in, kd, kh, kw]", axis="weights")
        _check_geometry((self.stride_d, self.stride_h, self.stride_w), (self.pad_d, self.pad_hw))
        _check_bias(self.bias, self.out_channels)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kd(self):
        return self.weights.shape[2]

    @property
    def kh(self):
        return self.weights.shape[3]

    @property
    def kw(self):
        return self.weights.shape[4]


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = field(default_factory=lambda: Config.BN_EPSILON)

    def __post_init__(self):
        lengths = {len(self.gamma), len(self.beta), len(self.running_mean), len(self.running_var)}
        if len(lengths) != 1:
            raise ShapeError(f"batchnorm arrays differ in length: {sorted(lengths)}", axis="channels")

    @property
    def channels(self):
        return len(self.gamma)


def _check_geometry(strides, pads):
    if any(int(s) < 1 for s in strides):
        raise ShapeError(f"strides must be >= 1, got {tuple(strides)}", axis="stride")
    if any(int(p) < 0 for p in pads):
        raise ShapeError(f"pads must be >= 0, got {tuple(pads)}", axis="pad")


def _check_bias(bias, out_channels):
    if bias is not None and len(bias) != out_channels:
        raise ShapeError(f"bias length {len(bias)} != out_channels {out_channels}", axis="bias")


# =========================================================
# 🧮 [Shape arithmetic]
# =========================================================
def conv_out_dim(size, kernel, stride=1, pad=0):
    return (size + 2 * pad - kernel) // stride + 1


def _out_dims(spatial, kernel, strides, pads, axis_names):
    out = []
    for size, k, s, p, name in zip(spatial, kernel, strides, pads, axis_names):
        if size + 2 * p < k:
            raise KernelTooLargeError(
                f"kernel exceeds input on axis '{name}': padded size {size + 2 * p} < kernel {k}", axis=name)
        o = conv_out_dim(size, k, s, p)
        if o < 1:
            raise KernelTooLargeError(f"kernel exceeds input on axis '{name}'", axis=name)
        out.append(o)
    return out


# =========================================================
# 🔧 [Batched kernels] x: (N, C, *spatial)
# =========================================================
def _zero_pad(x, pads):
    """pads: 공간 축별 대칭 zero pad (앞쪽 N, C 축은 그대로)"""
    if not any(pads):
        return x
    width = [(0, 0), (0, 0)] + [(int(p), int(p)) for p in pads]
    return np.pad(x, width, mode="constant")


def _window(x, offsets, strides, out_dims):
    sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offsets, strides, out_dims))
    return x[(slice(None), slice(None)) + sl]


def conv_batch(x, weight, bias=None, strides=(1, 1), pads=(0, 0), precision="float32", algo="direct"):
    """
    2-D / 3-D 공용 convolution.
    x: (N, C, *S), weight: (O, C, *K). 공간 차원 수는 weight 로 결정됩니다.
    """
    dtype = working_dtype(precision)
    x = np.asarray(x, dtype=dtype)
    weight = np.asarray(weight, dtype=dtype)
    nsp = weight.ndim - 2
    names = ("spectral", "rows", "cols")[-nsp:]

    if x.ndim != nsp + 2:
        raise ShapeError(f"input rank {x.ndim - 1} does not match a {nsp}-D kernel", axis="rank")
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(
            f"channel mismatch: input has {x.shape[1]}, kernel expects {weight.shape[1]}", axis="channels")

    kernel = weight.shape[2:]
    out_dims = _out_dims(x.shape[2:], kernel, strides, pads, names)
    xp = _zero_pad(x, pads)

    if algo == "direct":
        out = _conv_direct(xp, weight, strides, out_dims, dtype)
    elif algo == "im2col":
        out = _conv_im2col(xp, weight, strides, out_dims, dtype)
    else:
        raise TppiError(f"unknown conv algo '{algo}' (expected one of {ALGOS})")

    if bias is not None:
        out += np.asarray(bias, dtype=dtype).reshape((1, -1) + (1,) * nsp)
    return _check_finite(out, "conv")


def _conv_direct(xp, weight, strides, out_dims, dtype):
    n = xp.shape[0]
    o_ch, i_ch = weight.shape[:2]
    nsp = weight.ndim - 2
    out = np.zeros((n, o_ch) + tuple(out_dims), dtype=dtype)
    tmp = np.empty_like(out)
    bshape = (1, o_ch) + (1,) * nsp
    # 고정 누적 순서: in-channel -> (spectral) -> row -> col
    for c in range(i_ch):
        xc = xp[:, c:c + 1]
        for offsets in itertools.product(*(range(k) for k in weight.shape[2:])):
            w = weight[(slice(None), c) + offsets].reshape(bshape)
            np.multiply(w, _window(xc, offsets, strides, out_dims), out=tmp)
            out += tmp
    return out


def _conv_im2col(xp, weight, strides, out_dims, dtype):
    nsp = weight.ndim - 2
    kernel = weight.shape[2:]
    axes = tuple(range(2, 2 + nsp))
    cols = sliding_window_view(xp, kernel, axis=axes)
    cols = cols[(slice(None), slice(None)) + tuple(slice(None, None, s) for s in strides)]
    cols = cols[(slice(None), slice(None)) + tuple(slice(0, n) for n in out_dims)]
    # cols: (N, C, *O, *K) x weight: (O, C, *K)
    red_cols = [1] + list(range(2 + nsp, 2 + 2 * nsp))
    red_w = [1] + list(range(2, 2 + nsp))
    out = np.tensordot(cols, weight, axes=(red_cols, red_w))      # (N, *O, Cout)
    return np.ascontiguousarray(np.moveaxis(out, -1, 1)).astype(dtype, copy=False)


def batchnorm_batch(x, gamma, beta, mean, var, eps, precision="float32"):
    dtype = working_dtype(precision)
    x = np.asarray(x, dtype=dtype)
    var = np.asarray(var, dtype=dtype)
    if x.shape[1] != len(gamma):
        raise ShapeError(f"batchnorm expects {len(gamma)} channels, input has {x.shape[1]}", axis="channels")
    if np.any(var < 0):
        raise TppiError(f"batchnorm running_var has {int(np.sum(var < 0))} negative entries")
    shape = (1, -1) + (1,) * (x.ndim - 2)
    denom = np.sqrt(var + dtype(eps)).reshape(shape)
    out = (x - np.asarray(mean, dtype=dtype).reshape(shape)) / denom
    out = out * np.asarray(gamma, dtype=dtype).reshape(shape) + np.asarray(beta, dtype=dtype).reshape(shape)
    return _check_finite(out, "batchnorm")


def relu_batch(x):
    return np.maximum(x, 0).astype(x.dtype, copy=False)


def add_batch(a, b):
    if a.shape != b.shape:
        raise ShapeError(f"add requires identical dims, got {list(a.shape)} vs {list(b.shape)}", axis="dims")
    return a + b


def avgpool_batch(x, kh, kw, stride=1, pad=0):
    """마지막 두 축(rows, cols)에 대한 sliding 평균. 윈도우 합은 row-major 순서, 이후 kh*kw 로 나눕니다."""
    if pad:
        width = [(0, 0)] * (x.ndim - 2) + [(pad, pad), (pad, pad)]
        x = np.pad(x, width, mode="constant")
    oh = _out_dims([x.shape[-2]], [kh], [stride], [0], ["rows"])[0]
    ow = _out_dims([x.shape[-1]], [kw], [stride], [0], ["cols"])[0]
    out = np.zeros(x.shape[:-2] + (oh, ow), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            out += x[..., i:i + stride * (oh - 1) + 1:stride, j:j + stride * (ow - 1) + 1:stride]
    return out / x.dtype.type(kh * kw)


def global_avgpool_batch(x):
    # sliding pool 과 같은 합산 순서 -> s*s 입력에서 두 결과가 비트 단위로 일치
    return avgpool_batch(x, x.shape[-2], x.shape[-1])


def collapse_spectral_batch(x):
    """(N, C, D, H, W) -> (N, C*D, H, W), 출력 채널 = c*D + d"""
    n, c, d, h, w = x.shape
    return x.reshape(n, c * d, h, w)


def expand_spectral_batch(x, depth):
    n, cd, h, w = x.shape
    return x.reshape(n, cd // depth, depth, h, w)


def pad_mirror_batch(x, top, bottom, left, right):
    for name, p, size in (("rows", top, x.shape[-2]), ("rows", bottom, x.shape[-2]),
                          ("cols", left, x.shape[-1]), ("cols", right, x.shape[-1])):
        if p < 0:
            raise ShapeError(f"negative pad on '{name}'", axis=name)
        if p >= size:
            raise ShapeError(f"mirror pad {p} >= {name} dim {size}", axis=name)
    if not (top or bottom or left or right):
        return x.copy()
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    return np.pad(x, width, mode="reflect")


def pad_zero_batch(x, top, bottom, left, right):
    width = [(0, 0)] * (x.ndim - 2) + [(top, bottom), (left, right)]
    return np.pad(x, width, mode="constant")


def crop_center_batch(x, top, bottom, left, right):
    h, w = x.shape[-2:]
    if top + bottom >= h or left + right >= w:
        raise ShapeError(f"crop ({top},{bottom},{left},{right}) consumes {h}x{w}", axis="rows")
    return x[..., top:h - bottom, left:w - right]


def pad_batch(x, top, bottom, left, right, border="mirror"):
    if border == "mirror":
        return pad_mirror_batch(x, top, bottom, left, right)
    if border == "zero":
        return pad_zero_batch(x, top, bottom, left, right)
    raise TppiError(f"unknown border mode '{border}'")


def fc_batch(x, weight, bias=None, precision="float32"):
    """
    x: (N, F) 또는 (N, C, s, s) -> flatten (channel-major), weight: (O, F)
    누적은 F 인덱스 오름차순 = conv 의 in-channel -> row -> col 순서와 동일.
    """
    dtype = working_dtype(precision)
    x = np.asarray(x, dtype=dtype).reshape(len(x), -1)
    weight = np.asarray(weight, dtype=dtype)
    if x.shape[1] != weight.shape[1]:
        raise ShapeError(f"fc expects {weight.shape[1]} input features, got {x.shape[1]}", axis="features")
    out = np.zeros((x.shape[0], weight.shape[0]), dtype=dtype)
    tmp = np.empty_like(out)
    for f in range(weight.shape[1]):
        np.multiply(weight[:, f][None, :], x[:, f:f + 1], out=tmp)
        out += tmp
    if bias is not None:
        out += np.asarray(bias, dtype=dtype)[None, :]
    return _check_finite(out, "fc")


# =========================================================
# 🧩 [Tensor-level API] (N=1 래퍼)
# =========================================================
def _lift(x: Tensor, rank, dtype=None):
    if x.rank != rank:
        raise ShapeError(f"expected a rank-{rank} tensor, got rank {x.rank}", axis="rank")
    arr = x.data[None]
    return arr.astype(dtype, copy=False) if dtype is not None else arr


def conv2d(x: Tensor, k: ConvKernel2d, accum_precision="float32", algo="direct") -> Tensor:
    out = conv_batch(_lift(x, 3), k.weights, k.bias, strides=(k.stride_h, k.stride_w),
                     pads=(k.pad, k.pad), precision=accum_precision, algo=algo)
    return Tensor(out[0], ROLE_2D)


def conv3d(x: Tensor, k: ConvKernel3d, accum_precision="float32", algo="direct") -> Tensor:
    out = conv_batch(_lift(x, 4), k.weights, k.bias, strides=(k.stride_d, k.stride_h, k.stride_w),
                     pads=(k.pad_d, k.pad_hw, k.pad_hw), precision=accum_precision, algo=algo)
    return Tensor(out[0], ROLE_3D)


def batchnorm_infer(x: Tensor, p: BatchNormParams, accum_precision="float32") -> Tensor:
    out = batchnorm_batch(x.data[None], p.gamma, p.beta, p.running_mean, p.running_var,
                          p.epsilon, precision=accum_precision)
    return Tensor(out[0], x.role)


def relu(x: Tensor) -> Tensor:
    return Tensor(relu_batch(x.data), x.role)


def add(a: Tensor, b: Tensor) -> Tensor:
    return Tensor(add_batch(a.data, b.data), a.role)


def avgpool2d_sliding(x: Tensor, k: int, stride: int = 1, pad: int = 0) -> Tensor:
    return Tensor(avgpool_batch(x.data[None], k, k, stride, pad)[0], x.role)


def global_avgpool(x: Tensor) -> Tensor:
    return Tensor(global_avgpool_batch(x.data[None])[0], x.role)


def pad_mirror(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    return Tensor(pad_mirror_batch(x.data[None], top, bottom, left, right)[0], x.role)


def pad_zero(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    return Tensor(pad_zero_batch(x.data[None], top, bottom, left, right)[0], x.role)


def crop_center(x: Tensor, top: int, bottom: int, left: int, right: int) -> Tensor:
    return Tensor(np.ascontiguousarray(crop_center_batch(x.data, top, bottom, left, right)), x.role)


def collapse_spectral(x: Tensor) -> Tensor:
    return Tensor(collapse_spectral_batch(_lift(x, 4))[0], ROLE_2D)


def expand_spectral(x: Tensor, depth: int) -> Tensor:
    return Tensor(expand_spectral_batch(_lift(x, 3), depth)[0], ROLE_3D)


def fc_forward(x: Tensor, weight, bias=None, accum_precision="float32"):
    """Fc 한 개 적용, 결과는 [out, 1, 1] 텐서"""
    out = fc_batch(x.data[None], weight, bias, precision=accum_precision)
    return Tensor(out[0].reshape(-1, 1, 1), ROLE_2D)


def as_tensor(arr: Sequence, precision="float32") -> Tensor:
    return Tensor(np.asarray(arr, dtype=working_dtype(precision)))
