# bench.py
"""
[Benchmark Harness]
- patch-mode (batched TPPP) vs image-mode (TPPI) wall-clock 비교
- warm-up 1회는 통계에서 제외, R(>=2)회 측정 중앙값 + min/max spread
- FLOPs 는 cost model(count_flops) 값을 함께 기록
"""
import hashlib
import os
import platform
import time
from dataclasses import dataclass, field, asdict
from typing import Callable, Dict, List, Optional

import numpy as np

from config import Config
from engine.errors import TppiError
from engine.inference import predict_patchwise, predict_image, predict_tiled, pixel_list, extract_patches
from engine.metrics import evaluate_map
from engine.network import NetworkGraph, count_flops, network_id
from engine.tensor import pad_batch
from infra.utils import get_logger, resolve_threads

logger = get_logger("Bench")

MODES = ("patch", "image", "tiled")


@dataclass
class Timing:
    median: float
    min: float
    max: float
    runs: List[float] = field(default_factory=list)


@dataclass
class BenchReport:
    timings: Dict[str, Timing]
    flops: Dict[str, Optional[int]]
    patch_extract_time: Optional[float]
    machine: dict
    seed: int
    net_id: str
    cube_id: str
    runs: int

    @property
    def speedup(self):
        if "patch" not in self.timings or "image" not in self.timings:
            return None
        return self.timings["patch"].median / self.timings["image"].median

    def to_dict(self):
        return {
            "timings": {k: asdict(v) for k, v in self.timings.items()},
            "flops": self.flops,
            "flops_ratio": (self.flops["patch"] / self.flops["image"]
                            if self.flops.get("patch") and self.flops.get("image") else None),
            "speedup": self.speedup,
            "patch_extract_time": self.patch_extract_time,
            "machine": self.machine, "seed": self.seed,
            "net_id": self.net_id, "cube_id": self.cube_id, "runs": self.runs,
        }


@dataclass
class SweepRow:
    m: int
    patch_time: float
    image_time: float
    patch_flops: int
    image_flops: int
    oa: Optional[float] = None

    def to_dict(self):
        return asdict(self)


@dataclass
class SweepReport:
    rows: List[SweepRow] = field(default_factory=list)
    machine: dict = field(default_factory=dict)

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows], "machine": self.machine}


def machine_descriptor(threads=None):
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "cpu_count": os.cpu_count(),
        "threads": resolve_threads(threads),
    }


def cube_id(cube):
    data = np.ascontiguousarray(getattr(cube, "data", cube), dtype="<f4")
    h = hashlib.sha1(repr(data.shape).encode())
    h.update(data.tobytes())
    return h.hexdigest()[:12]


def _time(func, runs):
    func()      # warm-up (제외)
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        func()
        samples.append(time.perf_counter() - t0)
    return Timing(float(np.median(samples)), float(min(samples)), float(max(samples)), samples)


def _check_runs(runs):
    if runs < 2:
        raise TppiError(f"need at least 2 timed runs for a median, got {runs}")


def time_patch_extraction(net, cube, border=None):
    data = np.asarray(getattr(cube, "data", cube))
    r = (net.m - 1) // 2
    t0 = time.perf_counter()
    padded = pad_batch(data[None], r, r, r, r, border or Config.BORDER_MODE)[0]
    rows, cols = pixel_list(data.shape[1], data.shape[2], "all")
    extract_patches(padded, rows, cols, net.m)
    return time.perf_counter() - t0


def bench(net: NetworkGraph, cube, modes=("patch", "image"), runs=None, net_patch: Optional[NetworkGraph] = None,
          batch=None, workers=None, tile=None, seed=None) -> BenchReport:
    """
    net: image/tiled 모드용 TPPI 네트워크
    net_patch: patch 모드용 네트워크 (없으면 net). TPPP 원본과 TPPI 변환본을 비교할 때 사용.
    """
    runs = Config.BENCH_RUNS if runs is None else runs
    _check_runs(runs)
    unknown = [mode for mode in modes if mode not in MODES]
    if unknown:
        raise TppiError(f"unknown bench modes {unknown} (expected {MODES})")
    net_patch = net_patch or net
    data = np.asarray(getattr(cube, "data", cube))
    h, w = data.shape[1:]

    jobs = {
        "patch": lambda: predict_patchwise(net_patch, cube, "all", batch=batch, workers=workers,
                                           retain_logits=False),
        "image": lambda: predict_image(net, cube, pad_to_full=True, retain_logits=False),
        "tiled": lambda: predict_tiled(net, cube, tile or max(net.m, 32), pad_to_full=True, workers=workers,
                                       retain_logits=False),
    }
    timings = {}
    for mode in modes:
        timings[mode] = _time(jobs[mode], runs)
        logger.info(f"⏱️ [{mode}] median {timings[mode].median:.4f}s "
                    f"(min {timings[mode].min:.4f} / max {timings[mode].max:.4f})")

    flops = {"patch": None, "image": None}
    if "patch" in modes:
        flops["patch"] = count_flops(net_patch, h, w, mode="patch").patch_total
    if "image" in modes or "tiled" in modes:
        flops["image"] = count_flops(net, h, w, mode="image").image_total
    extract = time_patch_extraction(net_patch, cube) if "patch" in modes else None

    report = BenchReport(timings, flops, extract, machine_descriptor(workers),
                         Config.SEED if seed is None else seed, network_id(net), cube_id(cube), runs)
    if report.speedup is not None:
        logger.info(f"🚀 speedup patch/image = {report.speedup:.2f}x")
    return report


def sweep(cube, m_list=None, make_net: Callable[[int], NetworkGraph] = None, runs=None, gt=None,
          exclude_for: Callable[[int], np.ndarray] = None, batch=None, workers=None) -> SweepReport:
    """
    make_net(m) -> 학습됐거나 로드된 TPPI 네트워크 (m 마다 하나)
    gt 가 주어지면 image-mode 맵으로 OA 계산 (exclude_for(m) 마스크 제외)
    """
    m_list = list(m_list or Config.SWEEP_M_LIST)
    if any(m % 2 == 0 or m < 1 for m in m_list):
        raise TppiError(f"sweep m values must be positive odd numbers, got {m_list}")
    if m_list != sorted(set(m_list)):
        raise TppiError(f"sweep m values must be strictly ascending, got {m_list}")
    if make_net is None:
        raise TppiError("sweep needs a network factory")
    runs = Config.BENCH_RUNS if runs is None else runs
    _check_runs(runs)

    report = SweepReport(machine=machine_descriptor(workers))
    for m in m_list:
        net = make_net(m)
        if net.m != m:
            raise TppiError(f"factory returned a network with m={net.m} for m={m}")
        result = bench(net, cube, ("patch", "image"), runs, batch=batch, workers=workers)
        oa = None
        if gt is not None:
            cmap = predict_image(net, cube, pad_to_full=True, retain_logits=False)
            exclude = exclude_for(m) if exclude_for is not None else None
            oa = evaluate_map(cmap, gt, exclude).oa
        row = SweepRow(m, result.timings["patch"].median, result.timings["image"].median,
                       result.flops["patch"], result.flops["image"], oa)
        report.rows.append(row)
        logger.info(f"📈 m={m} patch {row.patch_time:.4f}s image {row.image_time:.4f}s "
                    f"flops {row.patch_flops}/{row.image_flops}")
    return report
