"""
[Tensor Core 검증 테스트]
======================================================
검증 항목:
  [T1] conv2d / conv3d: 출력 shape, 손으로 계산한 값, naive loop 오라클 일치
  [T2] 오류 계약: kernel 초과, 채널 불일치, 음수 running_var, mirror pad 한계
  [T3] batchnorm / relu / add / sliding avgpool 기본 동작
  [T4] mirror pad / center crop / spectral collapse 인덱스 규칙
  [T5] 성질: 선형성, 평행이동 등변성(비트 단위), 배치 구성과 무관한 결과
  [T6] direct vs im2col, global pool vs sliding pool, fc vs reshape conv

실행법: pytest tools/test_tensor_core.py
======================================================
"""
import numpy as np
import pytest

from engine.errors import ShapeError, KernelTooLargeError, TppiError
from engine.tensor import (
    Tensor, ConvKernel2d, ConvKernel3d, BatchNormParams,
    conv2d, conv3d, batchnorm_infer, relu, add, avgpool2d_sliding, global_avgpool,
    pad_mirror, crop_center, collapse_spectral, expand_spectral, as_tensor,
    conv_batch, avgpool_batch, global_avgpool_batch, fc_batch, pad_mirror_batch,
)


# ============================================================
# 오라클
# ============================================================
def naive_conv2d(x, w, b, stride=(1, 1), pad=0):
    c_in, h, wd = x.shape
    o_ch, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride[0] + 1
    ow = (wd + 2 * pad - kw) // stride[1] + 1
    out = np.zeros((o_ch, oh, ow))
    for o in range(o_ch):
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(c_in):
                    for r in range(kh):
                        for s in range(kw):
                            acc += w[o, c, r, s] * xp[c, i * stride[0] + r, j * stride[1] + s]
                out[o, i, j] = acc + (b[o] if b is not None else 0.0)
    return out


def naive_conv3d(x, w, stride=(1, 1, 1)):
    c_in, d, h, wd = x.shape
    o_ch, _, kd, kh, kw = w.shape
    od = (d - kd) // stride[0] + 1
    oh = (h - kh) // stride[1] + 1
    ow = (wd - kw) // stride[2] + 1
    out = np.zeros((o_ch, od, oh, ow))
    for o in range(o_ch):
        for z in range(od):
            for i in range(oh):
                for j in range(ow):
                    patch = x[:, z * stride[0]:z * stride[0] + kd, i * stride[1]:i * stride[1] + kh,
                              j * stride[2]:j * stride[2] + kw]
                    out[o, z, i, j] = float(np.sum(patch * w[o]))
    return out


# ============================================================
# T1: convolution
# ============================================================
def test_conv2d_sum_of_ones():
    x = as_tensor(np.ones((1, 3, 3)))
    k = ConvKernel2d(np.ones((1, 1, 3, 3), dtype=np.float32))
    out = conv2d(x, k)
    assert out.dims == [1, 1, 1]
    assert out.data[0, 0, 0] == 9.0


def test_conv2d_delta_kernel_is_interior_crop(rng):
    x = rng.standard_normal((1, 5, 5)).astype(np.float32)
    w = np.zeros((1, 1, 3, 3), dtype=np.float32)
    w[0, 0, 1, 1] = 1.0
    out = conv2d(Tensor(x), ConvKernel2d(w))
    np.testing.assert_array_equal(out.data, x[:, 1:4, 1:4])


def test_conv2d_matches_naive_oracle(rng):
    x = rng.standard_normal((4, 9, 9))
    w = rng.standard_normal((6, 4, 3, 3))
    b = rng.standard_normal(6)
    expected = naive_conv2d(x, w, b)
    out64 = conv2d(as_tensor(x, "float64"), ConvKernel2d(w, b), accum_precision="float64")
    np.testing.assert_allclose(out64.data, expected, atol=1e-6, rtol=0)
    out32 = conv2d(as_tensor(x), ConvKernel2d(w.astype(np.float32), b.astype(np.float32)))
    np.testing.assert_allclose(out32.data, expected, atol=1e-4, rtol=0)


def test_conv2d_randomized_shapes_against_oracle(rng):
    for _ in range(100):
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        kh, kw = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        pad = int(rng.integers(0, 2))
        stride = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        h, w = kh + int(rng.integers(0, 4)), kw + int(rng.integers(0, 4))
        x = rng.standard_normal((c_in, h, w))
        weight = rng.standard_normal((c_out, c_in, kh, kw))
        out = conv2d(as_tensor(x, "float64"), ConvKernel2d(weight, None, stride[0], stride[1], pad),
                     accum_precision="float64")
        np.testing.assert_allclose(out.data, naive_conv2d(x, weight, None, stride, pad), atol=1e-6, rtol=0)


def test_conv3d_spectral_output_length():
    x = as_tensor(np.zeros((1, 200, 1, 1)))
    k = ConvKernel3d(np.zeros((1, 1, 7, 1, 1), dtype=np.float32), stride_d=2)
    assert conv3d(x, k).dims == [1, 97, 1, 1]


def test_conv3d_column_sum():
    x = as_tensor(np.ones((1, 7, 3, 3)))
    k = ConvKernel3d(np.ones((1, 1, 7, 1, 1), dtype=np.float32))
    out = conv3d(x, k)
    assert out.dims == [1, 1, 3, 3]
    assert np.all(out.data == 7.0)


def test_conv3d_matches_naive_oracle(rng):
    x = rng.standard_normal((2, 15, 7, 7))
    w = rng.standard_normal((3, 2, 7, 1, 1))
    out = conv3d(as_tensor(x, "float64"), ConvKernel3d(w, stride_d=2), accum_precision="float64")
    assert out.dims == [3, 5, 7, 7]
    np.testing.assert_allclose(out.data, naive_conv3d(x, w, (2, 1, 1)), atol=1e-6, rtol=0)


# ============================================================
# T2: 오류 계약
# ============================================================
def test_kernel_exceeding_input_names_axis():
    x = as_tensor(np.ones((1, 2, 5)))
    with pytest.raises(KernelTooLargeError) as exc:
        conv2d(x, ConvKernel2d(np.ones((1, 1, 3, 3), dtype=np.float32)))
    assert exc.value.axis == "rows"
    assert "kernel exceeds input" in str(exc.value)


def test_channel_mismatch_names_axis():
    x = as_tensor(np.ones((2, 5, 5)))
    with pytest.raises(ShapeError) as exc:
        conv2d(x, ConvKernel2d(np.ones((1, 3, 3, 3), dtype=np.float32)))
    assert exc.value.axis == "channels"


def test_conv3d_spectral_kernel_too_large():
    x = as_tensor(np.ones((1, 4, 3, 3)))
    with pytest.raises(KernelTooLargeError) as exc:
        conv3d(x, ConvKernel3d(np.ones((1, 1, 7, 1, 1), dtype=np.float32)))
    assert exc.value.axis == "spectral"


def test_batchnorm_rejects_negative_variance():
    p = BatchNormParams(np.ones(1), np.zeros(1), np.zeros(1), np.array([-1.0]))
    with pytest.raises(TppiError):
        batchnorm_infer(as_tensor(np.ones((1, 2, 2))), p)


def test_mirror_pad_wider_than_input_fails():
    with pytest.raises(ShapeError):
        pad_mirror(as_tensor(np.ones((1, 3, 3))), 3, 0, 0, 0)


def test_add_requires_identical_dims():
    with pytest.raises(ShapeError):
        add(as_tensor(np.ones((1, 3, 3))), as_tensor(np.ones((1, 3, 4))))


def test_tensor_rank_and_dims_are_checked():
    with pytest.raises(ShapeError):
        Tensor(np.ones((3, 3)))
    with pytest.raises(ShapeError):
        Tensor(np.ones((1, 0, 3)))


# ============================================================
# T3: 기본 커널
# ============================================================
def test_batchnorm_identity_and_affine():
    x = as_tensor(np.full((1, 2, 2), 3.0))
    ident = BatchNormParams(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), epsilon=0.0)
    np.testing.assert_array_equal(batchnorm_infer(x, ident).data, x.data)
    affine = BatchNormParams(np.array([2.0]), np.array([1.0]), np.zeros(1), np.ones(1), epsilon=0.0)
    assert np.all(batchnorm_infer(x, affine).data == 7.0)


def test_batchnorm_matches_formula(rng):
    x = rng.standard_normal((4, 5, 5))
    gamma, beta = rng.standard_normal(4), rng.standard_normal(4)
    mean, var = rng.standard_normal(4), rng.uniform(0.1, 2.0, 4)
    p = BatchNormParams(gamma, beta, mean, var, epsilon=1e-5)
    out = batchnorm_infer(as_tensor(x, "float64"), p, accum_precision="float64")
    expected = (x - mean[:, None, None]) / np.sqrt(var[:, None, None] + 1e-5) * gamma[:, None, None] \
        + beta[:, None, None]
    np.testing.assert_allclose(out.data, expected, atol=1e-6)


def test_relu_add_and_pool():
    x = as_tensor(np.array([[[-1.5, 2.0]]]))
    np.testing.assert_array_equal(relu(x).data, [[[0.0, 2.0]]])
    y = as_tensor(np.arange(9.0).reshape(1, 3, 3))
    np.testing.assert_array_equal(add(y, as_tensor(np.zeros((1, 3, 3)))).data, y.data)
    pooled = avgpool2d_sliding(as_tensor(np.ones((1, 3, 3))), 3)
    assert pooled.dims == [1, 1, 1] and pooled.data[0, 0, 0] == 1.0


# ============================================================
# T4: pad / crop / collapse
# ============================================================
def test_mirror_pad_145_to_151():
    x = as_tensor(np.zeros((1, 145, 145)))
    assert pad_mirror(x, 3, 3, 3, 3).dims == [1, 151, 151]


def test_mirror_pad_reflects_without_repeating_edge():
    x = as_tensor(np.array([[[1.0, 2.0, 3.0]]]))
    out = pad_mirror(x, 0, 0, 1, 2)
    np.testing.assert_array_equal(out.data[0, 0], [2.0, 1.0, 2.0, 3.0, 2.0, 1.0])


def test_pad_zero_width_and_crop_inverse(rng):
    x = as_tensor(rng.standard_normal((2, 6, 7)))
    np.testing.assert_array_equal(pad_mirror(x, 0, 0, 0, 0).data, x.data)
    padded = pad_mirror(x, 2, 1, 3, 2)
    assert padded.dims == [2, 9, 12]
    np.testing.assert_array_equal(crop_center(padded, 2, 1, 3, 2).data, x.data)


def test_collapse_spectral_index_order(rng):
    assert collapse_spectral(as_tensor(np.zeros((24, 1, 7, 7)))).dims == [24, 7, 7]
    x = as_tensor(rng.standard_normal((2, 3, 4, 4)))
    out = collapse_spectral(x)
    assert out.dims == [6, 4, 4]
    for c in range(2):
        for d in range(3):
            np.testing.assert_array_equal(out.data[c * 3 + d], x.data[c, d])
    np.testing.assert_array_equal(expand_spectral(out, 3).data, x.data)


# ============================================================
# T5: 성질
# ============================================================
def test_conv_linearity(rng):
    x = rng.standard_normal((3, 8, 8))
    y = rng.standard_normal((3, 8, 8))
    k = ConvKernel2d(rng.standard_normal((2, 3, 3, 3)))

    def run(a):
        return conv2d(as_tensor(a, "float64"), k, accum_precision="float64").data

    np.testing.assert_allclose(run(2.5 * x), 2.5 * run(x), rtol=1e-6, atol=1e-12)
    np.testing.assert_allclose(run(x + y), run(x) + run(y), rtol=1e-6, atol=1e-9)


def test_conv_translation_equivariance_is_bit_exact(rng):
    x = rng.standard_normal((3, 12, 12)).astype(np.float32)
    k = ConvKernel2d(rng.standard_normal((4, 3, 3, 3)).astype(np.float32),
                     rng.standard_normal(4).astype(np.float32))
    full = conv2d(Tensor(x), k).data
    shifted = conv2d(Tensor(np.ascontiguousarray(x[:, 2:, 1:])), k).data
    np.testing.assert_array_equal(shifted, full[:, 2:, 1:])


def test_batch_composition_does_not_change_results(rng):
    x = rng.standard_normal((5, 2, 7, 7)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    together = conv_batch(x, w)
    for i in range(len(x)):
        np.testing.assert_array_equal(conv_batch(x[i:i + 1], w)[0], together[i])


# ============================================================
# T6: 알고리즘 간 교차 검증
# ============================================================
def test_im2col_matches_direct(rng):
    x = rng.standard_normal((2, 3, 9, 8)).astype(np.float32)
    w = rng.standard_normal((4, 3, 3, 2)).astype(np.float32)
    direct = conv_batch(x, w, strides=(2, 1), pads=(1, 1), algo="direct")
    im2col = conv_batch(x, w, strides=(2, 1), pads=(1, 1), algo="im2col")
    np.testing.assert_allclose(im2col, direct, atol=1e-4)
    with pytest.raises(TppiError):
        conv_batch(x, w, algo="winograd")


def test_global_pool_equals_sliding_pool_bit_exact(rng):
    x = rng.standard_normal((2, 8, 5, 5)).astype(np.float32)
    np.testing.assert_array_equal(global_avgpool_batch(x), avgpool_batch(x, 5, 5))
    np.testing.assert_allclose(global_avgpool(Tensor(x[0])).data[:, 0, 0], x[0].mean(axis=(1, 2)), atol=1e-6)


def test_fc_equals_reshaped_conv_bit_exact(rng):
    x = rng.standard_normal((4, 6, 3, 3)).astype(np.float32)
    w = rng.standard_normal((5, 6 * 9)).astype(np.float32)
    b = rng.standard_normal(5).astype(np.float32)
    fc = fc_batch(x, w, b)
    conv = conv_batch(x, w.reshape(5, 6, 3, 3), b)
    np.testing.assert_array_equal(conv[:, :, 0, 0], fc)


def test_mirror_pad_batch_keeps_leading_axes(rng):
    x = rng.standard_normal((2, 1, 3, 4, 4))
    out = pad_mirror_batch(x, 1, 1, 1, 1)
    assert out.shape == (2, 1, 3, 6, 6)
    np.testing.assert_array_equal(out[..., 1:5, 1:5], x)
