# data/hsi_io.py
"""
[HSI 입출력]
- cube: <payload> (raw little-endian f32, band-sequential) + <payload>.json 헤더
- GT  : <payload> (raw little-endian u16) + <payload>.json 헤더 (0 = unlabeled)
- 분류 맵: Pillow 로 binary PPM(P6) 저장, 클래스 0 은 검정
- palette: "class_id R G B name" 한 줄에 한 클래스
"""
import colorsys
import json
import os
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np
from PIL import Image

from config import Config
from engine.errors import DataFormatError, ShapeError
from infra.utils import get_logger

logger = get_logger("HsiIO")

CUBE_DTYPE = "f32le"
GT_DTYPE = "u16le"
_NUMPY_DTYPES = {CUBE_DTYPE: np.dtype("<f4"), GT_DTYPE: np.dtype("<u2")}
BAND_SEQUENTIAL = "band-sequential"


@dataclass(frozen=True, eq=False)
class HsiCube:
    data: np.ndarray                           # (B, H, W) float32
    name: str = "cube"
    normalization: Optional[dict] = None

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 3 or any(d < 1 for d in arr.shape):
            raise ShapeError(f"cube must be (bands, rows, cols) with all dims >= 1, got {arr.shape}", axis="dims")
        object.__setattr__(self, "data", arr)

    @property
    def bands(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    labels: np.ndarray                                          # (H, W) uint16
    class_names: Dict[int, str] = field(default_factory=dict)
    palette: Dict[int, Tuple[int, int, int]] = field(default_factory=dict)

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ShapeError(f"ground truth must be (rows, cols), got {arr.shape}", axis="dims")
        if arr.size and (arr.min() < 0 or arr.max() > np.iinfo(np.uint16).max):
            raise DataFormatError("ground truth labels must fit in u16")
        object.__setattr__(self, "labels", arr.astype(np.uint16, copy=False))

    @property
    def num_classes(self):
        return int(self.labels.max()) if self.labels.size else 0

    @property
    def height(self):
        return self.labels.shape[0]

    @property
    def width(self):
        return self.labels.shape[1]

    def labeled_count(self):
        return int(np.count_nonzero(self.labels))


# =========================================================
# 🗂️ [Raw payload + JSON sidecar]
# =========================================================
def _header_path(path):
    return f"{path}.json"


def _read_header(path):
    hpath = _header_path(path)
    if not os.path.exists(hpath):
        raise DataFormatError(f"missing header {hpath}")
    try:
        with open(hpath, "r", encoding="utf-8") as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{hpath}: invalid JSON ({e})")


def _read_payload(path, header, shape):
    dtype_name = header.get("dtype")
    if dtype_name not in _NUMPY_DTYPES:
        raise DataFormatError(f"{path}: unsupported dtype '{dtype_name}'")
    dtype = _NUMPY_DTYPES[dtype_name]
    expected = int(np.prod(shape)) * dtype.itemsize
    actual = os.path.getsize(path)
    if actual != expected:
        raise DataFormatError(
            f"{path}: header says {'x'.join(str(d) for d in shape)} ({expected} bytes), payload has {actual} bytes")
    return np.fromfile(path, dtype=dtype).reshape(shape)


def _write(path, arr, header):
    folder = os.path.dirname(path)
    if folder:
        os.makedirs(folder, exist_ok=True)
    np.ascontiguousarray(arr).tofile(path)
    with open(_header_path(path), "w", encoding="utf-8") as f:
        json.dump(header, f, indent=2)


def _dims(header, keys, path):
    try:
        dims = [int(header[k]) for k in keys]
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"{path}: header missing or invalid field ({e})")
    if any(d < 1 for d in dims):
        raise DataFormatError(f"{path}: all dims must be >= 1, got {dims}")
    return dims


def load_cube(path) -> HsiCube:
    header = _read_header(path)
    if header.get("order", BAND_SEQUENTIAL) != BAND_SEQUENTIAL:
        raise DataFormatError(f"{path}: only band-sequential order is supported")
    h, w, b = _dims(header, ("height", "width", "bands"), path)
    data = _read_payload(path, header, (b, h, w)).astype(np.float32)
    bad = int(data.size - np.count_nonzero(np.isfinite(data)))
    if bad:
        raise DataFormatError(f"{path}: {bad} non-finite values in cube")
    cube = HsiCube(data, header.get("name") or os.path.basename(path), header.get("normalization"))
    logger.info(f"📥 cube '{cube.name}' {h}x{w}x{b}")
    return cube


def save_cube(cube: HsiCube, path):
    header = {
        "format_version": Config.CUBE_FORMAT_VERSION,
        "height": cube.height, "width": cube.width, "bands": cube.bands,
        "dtype": CUBE_DTYPE, "order": BAND_SEQUENTIAL,
        "name": cube.name, "normalization": cube.normalization,
    }
    _write(path, cube.data.astype("<f4"), header)


def load_gt(path) -> GroundTruth:
    header = _read_header(path)
    h, w = _dims(header, ("height", "width"), path)
    labels = _read_payload(path, header, (h, w)).astype(np.uint16)
    names = {int(k): v for k, v in (header.get("class_names") or {}).items()}
    palette = {int(k): tuple(int(c) for c in v) for k, v in (header.get("palette") or {}).items()}
    return GroundTruth(labels, names, palette)


def save_gt(gt: GroundTruth, path):
    header = {
        "format_version": Config.CUBE_FORMAT_VERSION,
        "height": gt.height, "width": gt.width, "dtype": GT_DTYPE,
        "class_names": {str(k): v for k, v in gt.class_names.items()},
        "palette": {str(k): list(v) for k, v in gt.palette.items()},
    }
    _write(path, gt.labels.astype("<u2"), header)


def check_pair(cube: HsiCube, gt: GroundTruth):
    if (cube.height, cube.width) != (gt.height, gt.width):
        raise ShapeError(f"cube {cube.height}x{cube.width} and ground truth {gt.height}x{gt.width} differ",
                         axis="rows")


# =========================================================
# 📏 [Normalization]
# =========================================================
def normalize_cube(cube: HsiCube, method="minmax") -> HsiCube:
    """밴드별 정규화. 적용한 통계를 normalization 레코드로 남깁니다 (float64 로 계산)"""
    if cube.normalization:
        raise DataFormatError(f"cube '{cube.name}' is already normalized ({cube.normalization['method']})")
    data = cube.data.astype(np.float64)
    if method == "minmax":
        lo = data.min(axis=(1, 2))
        hi = data.max(axis=(1, 2))
        offset, scale = lo, np.where(hi > lo, hi - lo, 1.0)
        record = {"method": "minmax", "min": lo.tolist(), "max": hi.tolist()}
    elif method == "zscore":
        mean = data.mean(axis=(1, 2))
        std = data.std(axis=(1, 2))
        offset, scale = mean, np.where(std > 0, std, 1.0)
        record = {"method": "zscore", "mean": mean.tolist(), "std": std.tolist()}
    else:
        raise DataFormatError(f"unknown normalization '{method}'")
    out = (data - offset[:, None, None]) / scale[:, None, None]
    return HsiCube(out.astype(np.float32), cube.name, record)


def denormalize_cube(cube: HsiCube) -> HsiCube:
    record = cube.normalization
    if not record:
        raise DataFormatError(f"cube '{cube.name}' carries no normalization record")
    data = cube.data.astype(np.float64)
    if record["method"] == "minmax":
        lo, hi = np.asarray(record["min"]), np.asarray(record["max"])
        offset, scale = lo, np.where(hi > lo, hi - lo, 1.0)
    elif record["method"] == "zscore":
        std = np.asarray(record["std"])
        offset, scale = np.asarray(record["mean"]), np.where(std > 0, std, 1.0)
    else:
        raise DataFormatError(f"unknown normalization '{record['method']}'")
    out = data * scale[:, None, None] + offset[:, None, None]
    return HsiCube(out.astype(np.float32), cube.name, None)


# =========================================================
# 🎨 [Palette / map export]
# =========================================================
def default_palette(num_classes):
    """고정 hue 간격 (golden ratio) -> 실행마다 같은 색"""
    palette = {}
    for cls in range(1, num_classes + 1):
        hue = (cls * 0.618033988749895) % 1.0
        r, g, b = colorsys.hsv_to_rgb(hue, 0.75, 0.95)
        palette[cls] = (int(round(r * 255)), int(round(g * 255)), int(round(b * 255)))
    return palette


def load_palette(path):
    palette, names = {}, {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(None, 4)
            if len(parts) < 4:
                raise DataFormatError(f"{path}:{lineno}: expected 'class_id R G B name'")
            try:
                cls, r, g, b = (int(p) for p in parts[:4])
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer field")
            if not all(0 <= c <= 255 for c in (r, g, b)):
                raise DataFormatError(f"{path}:{lineno}: RGB out of range")
            palette[cls] = (r, g, b)
            if len(parts) == 5:
                names[cls] = parts[4]
    return palette, names


def save_palette(palette, path, names=None):
    names = names or {}
    with open(path, "w", encoding="utf-8") as f:
        for cls in sorted(palette):
            r, g, b = palette[cls]
            f.write(f"{cls} {r} {g} {b} {names.get(cls, f'class_{cls}')}\n")


def render_map(class_of, palette):
    class_of = np.asarray(class_of)
    missing = sorted(int(c) for c in np.unique(class_of) if c != 0 and int(c) not in palette)
    if missing:
        raise DataFormatError(f"classes without palette entry: {missing}")
    lut = np.zeros((int(max(list(palette) + [int(class_of.max())])) + 1, 3), dtype=np.uint8)
    for cls, rgb in palette.items():
        lut[cls] = rgb
    return lut[class_of]


def save_map(cmap, palette, path):
    """(H, W, 3) RGB -> binary PPM (P6)"""
    rgb = render_map(cmap.class_of, palette)
    Image.fromarray(np.ascontiguousarray(rgb)).save(path, format="PPM")
    logger.info(f"🗺️ map {cmap.height}x{cmap.width} -> {path}")


def save_probabilities(cmap, path, name=None):
    """retain 된 logits 의 softmax 확률을 band = class 인 cube 로 저장"""
    probs = cmap.probabilities().astype(np.float32)
    cube = HsiCube(probs, name or f"{os.path.basename(path)}-probabilities")
    save_cube(cube, path)
    return cube
