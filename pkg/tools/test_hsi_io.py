"""
[HSI 입출력 / 합성 장면 검증 테스트]
======================================================
검증 항목:
  [T1] cube / GT 저장-로드 (헤더 필드, 바이트 크기 불일치, non-finite, 헤더 없음)
  [T2] 정규화: minmax / zscore 범위, 역변환, 이중 정규화 거부
  [T3] 맵 출력: PPM(P6) 픽셀, palette 누락 클래스, 확률 cube, palette 파일
  [T4] 합성 장면: seed 결정성, sigma=0 이면 prototype 그대로, 모든 클래스 존재, unlabeled 비율
  [T5] cube / GT 크기 검사

실행법: pytest tools/test_hsi_io.py
======================================================
"""
import json

import numpy as np
import pytest
from PIL import Image

from data.hsi_io import (
    HsiCube, GroundTruth, load_cube, save_cube, load_gt, save_gt, check_pair,
    normalize_cube, denormalize_cube, default_palette, load_palette, save_palette,
    render_map, save_map, save_probabilities,
)
from data.synthetic import SceneSpec, gen_synthetic, make_prototypes, _voronoi_labels
from engine.errors import DataFormatError, ShapeError
from engine.inference import ClassificationMap


# ============================================================
# T1: cube / GT files
# ============================================================
def test_cube_round_trip_keeps_values_and_header(tmp_path, rng):
    data = rng.standard_normal((4, 6, 5)).astype(np.float32)
    path = tmp_path / "scene.cube"
    save_cube(HsiCube(data, "scene"), str(path))
    header = json.loads((tmp_path / "scene.cube.json").read_text())
    assert (header["height"], header["width"], header["bands"]) == (6, 5, 4)
    assert header["dtype"] == "f32le" and header["order"] == "band-sequential"
    assert path.stat().st_size == 4 * 6 * 5 * 4
    back = load_cube(str(path))
    assert back.name == "scene"
    assert back.data.tobytes() == data.tobytes()


def test_gt_round_trip_keeps_names_and_palette(tmp_path):
    labels = np.array([[0, 1, 2], [2, 2, 0]], dtype=np.uint16)
    gt = GroundTruth(labels, {1: "corn", 2: "woods"}, {1: (255, 0, 0), 2: (0, 128, 0)})
    path = str(tmp_path / "scene.gt")
    save_gt(gt, path)
    back = load_gt(path)
    np.testing.assert_array_equal(back.labels, labels)
    assert back.class_names == {1: "corn", 2: "woods"}
    assert back.palette == {1: (255, 0, 0), 2: (0, 128, 0)}
    assert back.labeled_count() == 4 and back.num_classes == 2


def test_payload_size_must_match_header(tmp_path):
    path = tmp_path / "short.cube"
    save_cube(HsiCube(np.ones((2, 3, 3), dtype=np.float32)), str(path))
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(DataFormatError, match="payload has 64 bytes"):
        load_cube(str(path))


def test_non_finite_values_are_rejected(tmp_path):
    data = np.ones((2, 3, 3), dtype=np.float32)
    data[1, 2, 0] = np.nan
    data[0, 0, 0] = np.inf
    path = str(tmp_path / "bad.cube")
    save_cube(HsiCube(data), path)
    with pytest.raises(DataFormatError, match="2 non-finite"):
        load_cube(path)


def test_missing_header(tmp_path):
    path = tmp_path / "orphan.cube"
    path.write_bytes(b"\x00" * 16)
    with pytest.raises(DataFormatError, match="missing header"):
        load_cube(str(path))
    with pytest.raises(DataFormatError):
        load_gt(str(path))


def test_cube_and_gt_shape_checks():
    with pytest.raises(ShapeError):
        HsiCube(np.zeros((3, 4)))
    with pytest.raises(ShapeError):
        GroundTruth(np.zeros((2, 2, 2)))


# ============================================================
# T2: normalization
# ============================================================
def test_minmax_maps_each_band_to_unit_range(rng):
    cube = HsiCube((rng.random((3, 8, 8)) * 500 + 100).astype(np.float32), "raw")
    norm = normalize_cube(cube, "minmax")
    assert norm.normalization["method"] == "minmax"
    np.testing.assert_allclose(norm.data.min(axis=(1, 2)), 0.0, atol=1e-6)
    np.testing.assert_allclose(norm.data.max(axis=(1, 2)), 1.0, atol=1e-6)
    np.testing.assert_allclose(denormalize_cube(norm).data, cube.data, rtol=1e-5)


def test_zscore_and_constant_band(rng):
    data = rng.standard_normal((2, 10, 10)).astype(np.float32) * 3 + 7
    data[1] = 4.0
    norm = normalize_cube(HsiCube(data), "zscore")
    np.testing.assert_allclose(norm.data[0].mean(), 0.0, atol=1e-5)
    np.testing.assert_allclose(norm.data[0].std(), 1.0, atol=1e-5)
    assert np.all(norm.data[1] == 0.0)


def test_normalization_is_applied_once():
    norm = normalize_cube(HsiCube(np.ones((1, 2, 2), dtype=np.float32)))
    with pytest.raises(DataFormatError, match="already normalized"):
        normalize_cube(norm)
    with pytest.raises(DataFormatError):
        normalize_cube(HsiCube(np.ones((1, 2, 2), dtype=np.float32)), "l2")
    with pytest.raises(DataFormatError):
        denormalize_cube(HsiCube(np.ones((1, 2, 2), dtype=np.float32)))


def test_normalization_record_survives_save(tmp_path, rng):
    norm = normalize_cube(HsiCube(rng.random((2, 4, 4)).astype(np.float32)), "zscore")
    path = str(tmp_path / "n.cube")
    save_cube(norm, path)
    assert load_cube(path).normalization == norm.normalization


# ============================================================
# T3: map / palette export
# ============================================================
def test_ppm_pixels_follow_palette(tmp_path):
    class_of = np.array([[1, 2, 0], [2, 1, 1]], dtype=np.int32)
    palette = {1: (255, 0, 0), 2: (0, 0, 255)}
    path = tmp_path / "map.ppm"
    save_map(ClassificationMap(2, 3, class_of), palette, str(path))
    assert path.read_bytes().startswith(b"P6")
    with Image.open(path) as img:
        assert img.size == (3, 2)
        rgb = np.asarray(img.convert("RGB"))
    assert tuple(rgb[0, 0]) == (255, 0, 0)
    assert tuple(rgb[0, 1]) == (0, 0, 255)
    assert tuple(rgb[0, 2]) == (0, 0, 0)


def test_render_map_needs_every_class():
    with pytest.raises(DataFormatError, match=r"\[3\]"):
        render_map(np.array([[1, 3]]), {1: (1, 2, 3)})


def test_default_palette_is_stable_and_distinct():
    a, b = default_palette(16), default_palette(16)
    assert a == b
    assert len(set(a.values())) == 16


def test_probability_cube_has_one_band_per_class(tmp_path, rng):
    logits = rng.standard_normal((4, 3, 5))
    cmap = ClassificationMap(3, 5, np.argmax(logits, axis=0) + 1, logits)
    path = str(tmp_path / "probs.cube")
    save_probabilities(cmap, path)
    back = load_cube(path)
    assert back.bands == 4
    np.testing.assert_allclose(back.data.sum(axis=0), 1.0, atol=1e-6)


def test_palette_file_round_trip(tmp_path):
    path = tmp_path / "palette.txt"
    save_palette({1: (10, 20, 30), 2: (0, 0, 0)}, str(path), {1: "alfalfa"})
    palette, names = load_palette(str(path))
    assert palette == {1: (10, 20, 30), 2: (0, 0, 0)}
    assert names == {1: "alfalfa", 2: "class_2"}


def test_palette_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("# comment\n1 10 20\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_palette(str(bad))
    bad.write_text("1 10 20 300 x\n")
    with pytest.raises(DataFormatError, match="out of range"):
        load_palette(str(bad))


# ============================================================
# T4: synthetic scenes
# ============================================================
def test_synthetic_scene_is_seed_deterministic():
    spec = SceneSpec(16, 18, 6, 4, seed=9)
    a_cube, a_gt = gen_synthetic(spec)
    b_cube, b_gt = gen_synthetic(spec)
    assert a_cube.data.tobytes() == b_cube.data.tobytes()
    np.testing.assert_array_equal(a_gt.labels, b_gt.labels)
    c_cube, _ = gen_synthetic(SceneSpec(16, 18, 6, 4, seed=10))
    assert a_cube.data.tobytes() != c_cube.data.tobytes()


def test_noise_free_scene_equals_prototypes():
    spec = SceneSpec(12, 10, 5, 3, seed=4, noise_sigma=0.0)
    cube, gt = gen_synthetic(spec)
    rng = np.random.default_rng(spec.seed)
    labels = _voronoi_labels(spec, rng)
    prototypes = make_prototypes(spec, rng)
    np.testing.assert_array_equal(gt.labels, labels)
    expected = prototypes[labels.astype(np.int64) - 1].transpose(2, 0, 1)
    np.testing.assert_array_equal(cube.data, expected)


def test_every_class_appears_and_prototypes_are_separated(small_scene):
    cube, gt = small_scene
    assert set(np.unique(gt.labels)) == {1, 2, 3}
    assert (cube.bands, cube.height, cube.width) == (5, 20, 24)
    assert gt.palette and gt.class_names[1] == "class_1"


def test_unlabeled_fraction():
    _, gt = gen_synthetic(SceneSpec(40, 40, 3, 3, seed=1, unlabeled_frac=0.5))
    frac = 1.0 - gt.labeled_count() / gt.labels.size
    assert 0.4 < frac < 0.6


def test_infeasible_scenes():
    with pytest.raises(DataFormatError):
        gen_synthetic(SceneSpec(2, 2, 3, 5))
    with pytest.raises(DataFormatError):
        gen_synthetic(SceneSpec(8, 8, 3, 3, unlabeled_frac=1.0))
    with pytest.raises(DataFormatError, match="prototypes"):
        gen_synthetic(SceneSpec(8, 8, 1, 10, min_gap=5.0))


# ============================================================
# T5: pair check
# ============================================================
def test_cube_and_gt_extent_must_match(small_scene):
    cube, gt = small_scene
    check_pair(cube, gt)
    with pytest.raises(ShapeError):
        check_pair(cube, GroundTruth(np.zeros((20, 23), dtype=np.uint16)))
