# data/synthetic.py
"""
[합성 장면 생성기]
seed 고정 Voronoi 영역 + 클래스별 매끄러운 스펙트럼 prototype + 가우시안 노이즈.
실제 IP/PU/SV 데이터 없이 학습/예측/벤치마크 전체 흐름을 돌려볼 수 있게 해 줍니다.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from data.hsi_io import HsiCube, GroundTruth, default_palette
from engine.errors import DataFormatError
from infra.utils import get_logger

logger = get_logger("Synthetic")

MAX_PROTOTYPE_ATTEMPTS = 1000


@dataclass
class SceneSpec:
    height: int
    width: int
    bands: int
    num_classes: int
    seed: int = 0
    noise_sigma: float = 0.02
    regions: Optional[int] = None       # Voronoi site 수 (기본 3*C)
    unlabeled_frac: float = 0.0
    min_gap: float = 0.5                # prototype 간 최소 L2 거리

    def validate(self):
        if min(self.height, self.width, self.bands, self.num_classes) < 1:
            raise DataFormatError(f"infeasible scene: all sizes must be >= 1 ({self})")
        if self.num_classes > 255:
            raise DataFormatError(f"infeasible scene: {self.num_classes} classes (max 255)")
        if self.height * self.width < self.num_classes:
            raise DataFormatError(
                f"infeasible scene: {self.height}x{self.width} grid cannot hold {self.num_classes} classes")
        if not 0.0 <= self.unlabeled_frac < 1.0:
            raise DataFormatError(f"unlabeled_frac must be in [0, 1), got {self.unlabeled_frac}")
        if self.noise_sigma < 0:
            raise DataFormatError("noise_sigma must be >= 0")

    @property
    def site_count(self):
        n = self.regions if self.regions is not None else 3 * self.num_classes
        return max(self.num_classes, min(n, self.height * self.width))


def _voronoi_labels(spec: SceneSpec, rng):
    h, w = spec.height, spec.width
    n = spec.site_count
    flat = rng.choice(h * w, size=n, replace=False)
    sites_r, sites_c = np.divmod(flat, w)
    # 처음 C 개 site 는 클래스 1..C 를 하나씩 -> 모든 클래스가 최소 한 영역을 가짐
    site_class = np.concatenate([np.arange(1, spec.num_classes + 1),
                                 rng.integers(1, spec.num_classes + 1, size=n - spec.num_classes)])
    rows, cols = np.mgrid[0:h, 0:w]
    d2 = (rows[..., None] - sites_r) ** 2 + (cols[..., None] - sites_c) ** 2
    owner = np.argmin(d2, axis=-1)
    return site_class[owner].astype(np.uint16)


def _smooth_curve(bands, rng):
    t = np.linspace(0.0, 1.0, bands)
    curve = np.full(bands, rng.uniform(0.3, 0.7))
    for k in range(1, 4):
        curve += rng.uniform(0.05, 0.25) / k * np.sin(2 * np.pi * (k * rng.uniform(0.5, 1.5) * t + rng.uniform()))
    return curve


def make_prototypes(spec: SceneSpec, rng):
    prototypes = []
    attempts = 0
    while len(prototypes) < spec.num_classes:
        attempts += 1
        if attempts > MAX_PROTOTYPE_ATTEMPTS:
            raise DataFormatError(
                f"infeasible scene: cannot place {spec.num_classes} prototypes over {spec.bands} bands "
                f"with min_gap {spec.min_gap}")
        cand = _smooth_curve(spec.bands, rng)
        if all(np.linalg.norm(cand - p) >= spec.min_gap for p in prototypes):
            prototypes.append(cand)
    return np.stack(prototypes).astype(np.float32)        # (C, B)


def gen_synthetic(spec: SceneSpec):
    """(HsiCube, GroundTruth) 반환. 같은 spec 이면 항상 같은 결과"""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    labels = _voronoi_labels(spec, rng)
    prototypes = make_prototypes(spec, rng)

    data = np.ascontiguousarray(prototypes[labels.astype(np.int64) - 1].transpose(2, 0, 1))
    if spec.noise_sigma > 0:
        noise = rng.standard_normal(data.shape) * spec.noise_sigma
        data = (data + noise).astype(np.float32)

    gt_labels = labels.copy()
    if spec.unlabeled_frac > 0:
        hidden = rng.random(labels.shape) < spec.unlabeled_frac
        gt_labels[hidden] = 0

    name = f"synthetic-{spec.height}x{spec.width}x{spec.bands}-c{spec.num_classes}-s{spec.seed}"
    cube = HsiCube(data, name)
    names = {c: f"class_{c}" for c in range(1, spec.num_classes + 1)}
    gt = GroundTruth(gt_labels, names, default_palette(spec.num_classes))
    logger.info(f"🧪 generated {name} ({gt.labeled_count()} labeled pixels)")
    return cube, gt
