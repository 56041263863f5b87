"""
공용 pytest fixture.
- 프로젝트 루트를 sys.path 에 추가
- 테스트 중에는 로그 파일을 만들지 않음 (TPPI_LOG_FILE="")
- 작은 합성 장면 / 무작위 TPPI-valid 네트워크 생성기
"""
import os
import sys

os.environ.setdefault("TPPI_LOG_FILE", "")

current_dir = os.path.dirname(os.path.abspath(__file__))
root_dir = os.path.dirname(current_dir)
if root_dir not in sys.path:
    sys.path.insert(0, root_dir)

import numpy as np
import pytest

from data.synthetic import SceneSpec, gen_synthetic
from engine.network import NetworkBuilder, init_network, BATCHNORM


def randomize_network(net, rng):
    """He init 위에 BN running 통계 / bias 를 무작위로 덮어써서 항등에 가까운 레이어를 없앱니다"""
    for layer in net.layers:
        if layer.kind == BATCHNORM:
            c = layer.p("channels")
            layer.weights["gamma"] = rng.uniform(0.5, 1.5, c).astype(np.float32)
            layer.weights["beta"] = rng.normal(0.0, 0.1, c).astype(np.float32)
            layer.weights["running_mean"] = rng.normal(0.0, 0.2, c).astype(np.float32)
            layer.weights["running_var"] = rng.uniform(0.5, 2.0, c).astype(np.float32)
        elif "bias" in layer.weights:
            shape = layer.weights["bias"].shape
            layer.weights["bias"] = rng.normal(0.0, 0.1, shape).astype(np.float32)
    return net


def make_random_tppi_net(rng, m, bands=None, num_classes=None, rank=None):
    """
    stride 1 / 공간 pad 0 만 쓰는 무작위 네트워크 (conv2d, conv3d, BN, ReLU, residual, sliding pool).
    공간 kernel 의 (k-1) 합이 정확히 m-1 이 되도록 구성합니다.
    """
    bands = bands or int(rng.integers(3, 7))
    num_classes = num_classes or int(rng.integers(2, 5))
    rank = rank or int(rng.choice([3, 4]))
    b = NetworkBuilder(bands, m, rank=rank, name=f"random-m{m}")
    budget = m - 1

    if rank == 4:
        k = 3 if budget >= 2 and rng.random() < 0.5 else 1
        b.conv3d(int(rng.integers(2, 4)), kd=min(3, bands), k=k,
                 stride_d=int(rng.choice([1, 2])), pad_d=int(rng.integers(0, 2)))
        budget -= k - 1
        b.bn().relu()
        if rng.random() < 0.5:
            b.begin().conv3d(b.channels, kd=3, pad_d=1).bn().relu().end()
        b.collapse()

    width = int(rng.integers(2, 5))
    while budget > 0:
        choice = int(rng.integers(0, 4))
        if choice == 0 or (choice == 2 and budget < 4):
            b.conv2d(width, k=3).bn().relu()
            budget -= 2
        elif choice == 1:
            b.avgpool(3)
            budget -= 2
        elif choice == 2:
            b.conv2d(width, k=1)
            b.begin().conv2d(width, k=3).bn().relu().conv2d(width, k=3).bn().end().relu()
            budget -= 4
        else:
            b.conv2d(width, k=1).relu()
    b.conv2d(num_classes, k=1)
    b.softmax()
    net = init_network(b.build(num_classes), seed=int(rng.integers(0, 2 ** 31)))
    return randomize_network(net, rng)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_tppi_net():
    return make_random_tppi_net


@pytest.fixture
def randomize():
    return randomize_network


@pytest.fixture
def small_scene():
    """(cube, gt): 20x24, 5 bands, 3 classes"""
    return gen_synthetic(SceneSpec(20, 24, 5, 3, seed=3))
