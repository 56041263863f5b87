# trainer.py
"""
[Pixel 기반 학습기]
- 라벨 픽셀을 train / val / test 로 분할 (클래스별 stratified, floor 반올림)
- 각 픽셀의 mirror-pad m*m*B 패치 -> 스칼라 라벨 (출력 1x1)
- softmax cross-entropy (batch 평균) + momentum SGD + weight decay
- BatchNorm 은 frozen-statistics 모드: warm-up 한 번으로 running 통계를 고정하고 gamma/beta 만 학습
"""
import itertools
import math
import time
from dataclasses import dataclass, field, fields, asdict, replace
from fractions import Fraction
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np
import yaml
from sklearn.metrics import confusion_matrix

from config import Config
from engine.errors import TppiError, ShapeError, ConfigError, TrainingDiverged
from engine.inference import apply_layer, extract_patches, forward
from engine.metrics import metrics_from_confusion
from engine.network import (
    NetworkGraph, check_network, init_network, network_id, residual_crop,
    CONV2D, CONV3D, BATCHNORM, RELU, AVGPOOL2D, GLOBAL_AVGPOOL, COLLAPSE_SPECTRAL, FC,
    RESIDUAL_BEGIN, RESIDUAL_END, SOFTMAX,
)
from engine.tensor import working_dtype, pad_batch
from infra.utils import get_logger, log_op_call

logger = get_logger("Trainer")

SPLITS = ("train", "val", "test")
TRAINABLE = ("weight", "bias", "gamma", "beta")
BN_MODE = "frozen-statistics (running mean/var from one warm-up pass over the train split; gamma/beta trained)"


# =========================================================
# ⚙️ [TrainConfig]
# =========================================================
@dataclass
class TrainConfig:
    batch_size: int = Config.BATCH_SIZE
    lr: float = Config.LEARNING_RATE
    momentum: float = Config.MOMENTUM
    weight_decay: float = Config.WEIGHT_DECAY
    epochs: int = Config.EPOCHS
    seed: int = Config.SEED
    precision: str = Config.PRECISION
    algo: str = Config.CONV_ALGO
    stratified: bool = Config.STRATIFIED
    train_frac: float = Config.TRAIN_FRAC
    val_frac: float = Config.VAL_FRAC
    bn_warmup_batches: Optional[int] = None      # None = train split 전체

    def __post_init__(self):
        self.validate()

    def validate(self):
        # lr == 0 은 허용 (가중치 고정 확인용)
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.train_frac < 0 or self.val_frac < 0 or self.train_frac + self.val_frac >= 1:
            raise ConfigError(f"fractions must be >= 0 with sum < 1, got {self.train_frac} + {self.val_frac}")
        working_dtype(self.precision)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(values) - known)
        if unknown:
            raise ConfigError(f"unknown training config keys: {unknown}")
        return cls(**values)

    @classmethod
    def from_yaml(cls, path, **overrides):
        with open(path, "r", encoding="utf-8") as f:
            values = yaml.safe_load(f) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: expected a mapping of training options")
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_dict(values)

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    epochs: List[dict] = field(default_factory=list)
    best_epoch: Optional[int] = None
    best_val_oa: Optional[float] = None
    checkpoint_id: Optional[str] = None
    wall_time: float = 0.0
    bn_mode: str = BN_MODE
    config: dict = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)

    @property
    def train_losses(self):
        return [e["train_loss"] for e in self.epochs]

    def to_dict(self):
        return {
            "epochs": self.epochs, "epochs_run": len(self.epochs),
            "best_epoch": self.best_epoch, "best_val_oa": self.best_val_oa,
            "checkpoint_id": self.checkpoint_id, "wall_time": self.wall_time,
            "bn_mode": self.bn_mode, "config": self.config, "warnings": self.warnings,
        }


# =========================================================
# 🧾 [LabeledDataset / split]
# =========================================================
@dataclass
class LabeledDataset:
    rows: np.ndarray
    cols: np.ndarray
    labels: np.ndarray
    split: np.ndarray                    # entry 별 'train' | 'val' | 'test'
    height: int
    width: int
    num_classes: int
    cube: Optional[object] = None        # HsiCube
    m: Optional[int] = None
    border: str = Config.BORDER_MODE
    warnings: List[str] = field(default_factory=list)

    def indices(self, tag):
        if tag not in SPLITS:
            raise TppiError(f"unknown split '{tag}'")
        return np.nonzero(self.split == tag)[0]

    def count(self, tag):
        return int(np.count_nonzero(self.split == tag))

    def mask(self, *tags):
        out = np.zeros((self.height, self.width), dtype=bool)
        for tag in tags:
            idx = self.indices(tag)
            out[self.rows[idx], self.cols[idx]] = True
        return out

    def bind(self, cube, m, border=None):
        """학습/평가에 쓸 cube 와 patch 크기를 연결한 새 dataset"""
        if (cube.height, cube.width) != (self.height, self.width):
            raise ShapeError(f"cube {cube.height}x{cube.width} does not match labels {self.height}x{self.width}",
                             axis="rows")
        if m < 1 or m % 2 == 0:
            raise TppiError(f"patch size m must be a positive odd number, got {m}")
        return replace(self, cube=cube, m=m, border=border or self.border)

    @cached_property
    def padded(self):
        if self.cube is None:
            raise TppiError("dataset has no cube attached (use bind)")
        r = (self.m - 1) // 2
        return pad_batch(np.asarray(self.cube.data)[None], r, r, r, r, self.border)[0]

    def patches(self, idx):
        """(N, B, m, m) mirror-pad 이웃"""
        idx = np.asarray(idx)
        return extract_patches(self.padded, self.rows[idx], self.cols[idx], self.m)


def _class_take(count, frac):
    return math.floor(count * Fraction(str(frac)))


@log_op_call("split_dataset")
def split_dataset(gt, train_frac=Config.TRAIN_FRAC, val_frac=Config.VAL_FRAC, seed=0, stratified=True,
                  cube=None, m=None) -> LabeledDataset:
    if train_frac < 0 or val_frac < 0 or train_frac + val_frac >= 1:
        raise ConfigError(f"fractions must be >= 0 with sum < 1, got {train_frac} + {val_frac}")
    labels = np.asarray(getattr(gt, "labels", gt))
    rows, cols = np.nonzero(labels > 0)
    values = labels[rows, cols].astype(np.int64)
    split = np.full(len(rows), "test", dtype=object)
    rng = np.random.default_rng(seed)
    warnings = []

    groups = [np.nonzero(values == c)[0] for c in np.unique(values)] if stratified else [np.arange(len(rows))]
    for members in groups:
        perm = rng.permutation(members)
        n_train = _class_take(len(perm), train_frac)
        n_val = _class_take(len(perm), val_frac)
        if stratified and len(perm) < Config.MIN_PIXELS_PER_CLASS:
            cls = int(values[perm[0]])
            # best-effort: train 에 최소 1개
            if train_frac > 0:
                n_train = max(n_train, 1)
            n_val = min(n_val, len(perm) - n_train)
            msg = f"class {cls} has only {len(perm)} labeled pixels (best-effort split {n_train}/{n_val})"
            logger.warning(f"⚠️ {msg}")
            warnings.append(msg)
        split[perm[:n_train]] = "train"
        split[perm[n_train:n_train + n_val]] = "val"

    ds = LabeledDataset(rows, cols, values, split, labels.shape[0], labels.shape[1],
                        int(values.max()) if len(values) else 0, warnings=warnings)
    if cube is not None:
        ds = ds.bind(cube, m)
    logger.info(f"🧾 split: train {ds.count('train')} | val {ds.count('val')} | test {ds.count('test')}")
    return ds


def sample_batch(ds: LabeledDataset, split, batch, rng):
    """split 에서 batch 개 패치를 무작위 추출 -> (x (N, B, m, m), y (N,))"""
    idx = ds.indices(split)
    if len(idx) == 0:
        raise TppiError(f"split '{split}' is empty")
    chosen = rng.choice(idx, size=batch, replace=batch > len(idx))
    return ds.patches(chosen), ds.labels[chosen]


def net_input(net: NetworkGraph, patches):
    return patches[:, None] if net.input_spec.rank == 4 else patches


# =========================================================
# 🔙 [Forward cache / backward]
# =========================================================
def _forward_cached(net, x, precision, algo):
    arr = np.asarray(x, dtype=working_dtype(precision))
    stack, cache = [], []
    for layer in net.layers:
        skip_shape = stack[-1].shape if layer.kind == RESIDUAL_END else None
        cache.append((layer, arr, skip_shape))
        arr = apply_layer(layer, arr, stack, precision, algo)
    return arr, cache


def _logits_2d(out):
    if any(d != 1 for d in out.shape[2:]):
        raise ShapeError(f"training expects a 1x1 output per patch, got spatial {list(out.shape[2:])}",
                         axis="rows")
    return out.reshape(out.shape[0], out.shape[1])


def softmax_cross_entropy(logits, y):
    """logits (N, C), y (N,) in 1..C -> (loss, dlogits)"""
    n = logits.shape[0]
    target = np.asarray(y, dtype=np.int64) - 1
    if np.any(target < 0) or np.any(target >= logits.shape[1]):
        raise TppiError(f"labels must be in 1..{logits.shape[1]}")
    zmax = logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(logits - zmax).sum(axis=1, keepdims=True)) + zmax
    loss = float(np.mean(lse[:, 0] - logits[np.arange(n), target]))
    grad = np.exp(logits - lse)
    grad[np.arange(n), target] -= 1
    return loss, grad / n


def _conv_backward(layer, x, g):
    p = layer.params
    if layer.kind == CONV2D:
        strides, pads = (p["stride_h"], p["stride_w"]), (p["pad"], p["pad"])
    else:
        strides, pads = (p["stride_d"], p["stride_h"], p["stride_w"]), (p["pad_d"], p["pad_hw"], p["pad_hw"])
    w = np.asarray(layer.weights["weight"], dtype=g.dtype)
    nsp = len(strides)
    xp = np.pad(x, [(0, 0), (0, 0)] + [(q, q) for q in pads]) if any(pads) else x
    out_dims = g.shape[2:]
    red = [0] + list(range(2, 2 + nsp))
    gw = np.zeros(w.shape, dtype=g.dtype)
    gxp = np.zeros(xp.shape, dtype=g.dtype)
    for offs in itertools.product(*(range(k) for k in w.shape[2:])):
        sl = (slice(None), slice(None)) + tuple(
            slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, strides, out_dims))
        key = (slice(None), slice(None)) + offs
        gw[key] = np.tensordot(g, xp[sl], axes=(red, red))
        gxp[sl] += np.moveaxis(np.tensordot(w[key], g, axes=([0], [1])), 0, 1)
    gx = gxp[(slice(None), slice(None)) + tuple(slice(q, q + x.shape[2 + i]) for i, q in enumerate(pads))]
    grads = {"weight": gw}
    if p["bias"]:
        grads["bias"] = g.sum(axis=tuple(red))
    return gx, grads


def _batchnorm_backward(layer, x, g):
    shape = (1, -1) + (1,) * (x.ndim - 2)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    wt = layer.weights
    inv = 1.0 / np.sqrt(np.asarray(wt["running_var"], dtype=g.dtype) + g.dtype.type(layer.p("epsilon")))
    xhat = (x - np.asarray(wt["running_mean"], dtype=g.dtype).reshape(shape)) * inv.reshape(shape)
    grads = {"gamma": (g * xhat).sum(axis=axes), "beta": g.sum(axis=axes)}
    gx = g * (np.asarray(wt["gamma"], dtype=g.dtype) * inv).reshape(shape)
    return gx, grads


def _avgpool_backward(layer, x, g):
    k, s, pad = layer.p("k"), layer.p("stride"), layer.p("pad")
    h, w = x.shape[-2:]
    gxp = np.zeros(x.shape[:-2] + (h + 2 * pad, w + 2 * pad), dtype=g.dtype)
    oh, ow = g.shape[-2:]
    share = g / g.dtype.type(k * k)
    for i in range(k):
        for j in range(k):
            gxp[..., i:i + s * (oh - 1) + 1:s, j:j + s * (ow - 1) + 1:s] += share
    return gxp[..., pad:pad + h, pad:pad + w]


def _fc_backward(layer, x, g):
    g2 = g.reshape(g.shape[0], g.shape[1])
    xf = x.reshape(x.shape[0], -1)
    w = np.asarray(layer.weights["weight"], dtype=g.dtype)
    grads = {"weight": g2.T @ xf}
    if layer.p("bias"):
        grads["bias"] = g2.sum(axis=0)
    return (g2 @ w).reshape(x.shape), grads


def backward(net: NetworkGraph, x, y, precision="float32", algo="direct"):
    """
    softmax CE (batch 평균) 의 loss 와 레이어별 gradient.
    반환: (loss, {layer_id: {weight/bias/gamma/beta: array}})
    """
    out, cache = _forward_cached(net, x, precision, algo)
    loss, dlogits = softmax_cross_entropy(_logits_2d(out), y)
    g = dlogits.reshape(out.shape).astype(out.dtype, copy=False)
    grads: Dict[str, Dict[str, np.ndarray]] = {}
    skip_grads = []

    for layer, x_in, skip_shape in reversed(cache):
        kind = layer.kind
        if kind in (CONV2D, CONV3D):
            g, grads[layer.id] = _conv_backward(layer, x_in, g)
        elif kind == BATCHNORM:
            g, grads[layer.id] = _batchnorm_backward(layer, x_in, g)
        elif kind == FC:
            g, grads[layer.id] = _fc_backward(layer, x_in, g)
        elif kind == RELU:
            g = g * (x_in > 0)
        elif kind == AVGPOOL2D:
            g = _avgpool_backward(layer, x_in, g)
        elif kind == GLOBAL_AVGPOOL:
            h, w = x_in.shape[-2:]
            g = np.broadcast_to(g / g.dtype.type(h * w), x_in.shape).copy()
        elif kind == COLLAPSE_SPECTRAL:
            g = g.reshape(x_in.shape)
        elif kind == RESIDUAL_END:
            top, left = residual_crop(layer, list(skip_shape[1:]), list(x_in.shape[1:]))
            gs = np.zeros(skip_shape, dtype=g.dtype)
            gs[..., top:top + g.shape[-2], left:left + g.shape[-1]] = g
            skip_grads.append(gs)
        elif kind == RESIDUAL_BEGIN:
            g = g + skip_grads.pop()
        elif kind == SOFTMAX:
            # logits 학습에서는 항등
            continue
        else:
            raise TppiError(f"layer '{layer.id}' ({kind}) is not differentiable")
    return loss, grads


def loss_only(net: NetworkGraph, x, y, precision="float64", algo="direct"):
    out, _ = _forward_cached(net, x, precision, algo)
    return softmax_cross_entropy(_logits_2d(out), y)[0]


# =========================================================
# 🔧 [Optimizer / BN warm-up]
# =========================================================
def sgd_step(net: NetworkGraph, grads, velocity, cfg: TrainConfig):
    """v <- momentum*v - lr*(g + wd*w); w <- w + v (BN running 통계는 제외)"""
    for layer in net.layers:
        layer_grads = grads.get(layer.id)
        if not layer_grads:
            continue
        for key in TRAINABLE:
            if key not in layer_grads:
                continue
            w = layer.weights[key]
            slot = (layer.id, key)
            v = velocity.get(slot)
            if v is None:
                v = np.zeros_like(w)
            v = cfg.momentum * v - cfg.lr * (layer_grads[key] + cfg.weight_decay * w)
            velocity[slot] = v.astype(w.dtype, copy=False)
            layer.weights[key] = w + velocity[slot]


def warm_up_batchnorm(net: NetworkGraph, ds: LabeledDataset, cfg: TrainConfig):
    """train split 을 레이어 순서대로 흘리며 각 BN 의 running mean/var 를 그 지점의 통계로 고정"""
    idx = ds.indices("train")
    if cfg.bn_warmup_batches:
        idx = idx[:cfg.bn_warmup_batches * cfg.batch_size]
    if not any(l.kind == BATCHNORM for l in net.layers) or len(idx) == 0:
        return net
    dtype = working_dtype(cfg.precision)
    acts = [net_input(net, ds.patches(idx[i:i + cfg.batch_size])).astype(dtype)
            for i in range(0, len(idx), cfg.batch_size)]
    stacks = [[] for _ in acts]
    for layer in net.layers:
        if layer.kind == BATCHNORM:
            axes = tuple(i for i in range(acts[0].ndim) if i != 1)
            count = sum(int(np.prod([a.shape[i] for i in axes])) for a in acts)
            mean = sum(a.sum(axis=axes, dtype=np.float64) for a in acts) / count
            shape = (1, -1) + (1,) * (acts[0].ndim - 2)
            var = sum(((a - mean.reshape(shape)) ** 2).sum(axis=axes, dtype=np.float64) for a in acts) / count
            layer.weights["running_mean"] = mean.astype(dtype)
            layer.weights["running_var"] = var.astype(dtype)
        acts = [apply_layer(layer, a, st, cfg.precision, cfg.algo) for a, st in zip(acts, stacks)]
    logger.info(f"🔥 BN warm-up over {len(idx)} train patches")
    return net


# =========================================================
# 📈 [Evaluation on patches]
# =========================================================
def classify_split(net: NetworkGraph, ds: LabeledDataset, split, precision="float32", algo="direct", batch=None):
    idx = ds.indices(split)
    batch = batch or Config.PREDICT_BATCH
    preds = []
    for start in range(0, len(idx), batch):
        chunk = idx[start:start + batch]
        out = forward(net, net_input(net, ds.patches(chunk)), precision, algo)
        preds.append(np.argmax(_logits_2d(out), axis=1) + 1)
    pred = np.concatenate(preds) if preds else np.zeros(0, dtype=np.int64)
    return ds.labels[idx], pred


def split_accuracy(net, ds, split, precision="float32", algo="direct"):
    y, pred = classify_split(net, ds, split, precision, algo)
    return float(np.mean(y == pred)) if len(y) else None


def evaluate_test_phase(net: NetworkGraph, ds: LabeledDataset, precision="float32", algo="direct"):
    """test split 패치 분류 (test phase). 전체 영상 예측(prediction phase)은 evaluate_map 사용"""
    y, pred = classify_split(net, ds, "test", precision, algo)
    if not len(y):
        raise TppiError("test split is empty")
    classes = list(range(1, max(ds.num_classes, net.num_classes) + 1))
    return metrics_from_confusion(confusion_matrix(y, pred, labels=classes), classes)


# =========================================================
# 🎓 [Training loop]
# =========================================================
def _cast_weights(net, dtype):
    for layer in net.layers:
        for key in list(layer.weights):
            layer.weights[key] = np.asarray(layer.weights[key], dtype=dtype).copy()


def _finite(net):
    return all(np.all(np.isfinite(w)) for layer in net.layers for w in layer.weights.values())


@log_op_call("train")
def train(net: NetworkGraph, ds: LabeledDataset, cfg: Optional[TrainConfig] = None):
    """반환: (best-val 가중치를 담은 net, TrainLog)"""
    cfg = cfg or TrainConfig()
    cfg.validate()
    started = time.perf_counter()
    check_network(net)
    if ds.cube is None:
        raise TppiError("dataset has no cube attached (use bind)")
    if ds.m != net.m:
        raise TppiError(f"dataset patch size {ds.m} != network m {net.m}")
    if ds.cube.bands != net.bands:
        raise ShapeError(f"cube has {ds.cube.bands} bands, network expects {net.bands}", axis="bands")
    train_idx = ds.indices("train")
    if len(train_idx) == 0:
        raise TppiError("train split is empty")

    work = net.copy() if net.has_weights() else init_network(net, seed=cfg.seed)
    _cast_weights(work, working_dtype(cfg.precision))
    # lr=0 이면 BN running stats 포함 가중치 전체를 그대로 둠
    if cfg.lr > 0:
        warm_up_batchnorm(work, ds, cfg)

    log = TrainLog(config=cfg.to_dict(), warnings=list(ds.warnings))
    rng = np.random.default_rng(cfg.seed)
    velocity = {}
    best = work.copy()
    last_good = work.copy()

    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, len(perm), cfg.batch_size):
            chunk = perm[start:start + cfg.batch_size]
            x = net_input(work, ds.patches(chunk))
            loss, grads = backward(work, x, ds.labels[chunk], cfg.precision, cfg.algo)
            if not math.isfinite(loss):
                log.wall_time = time.perf_counter() - started
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}", checkpoint=last_good, log=log)
            sgd_step(work, grads, velocity, cfg)
            losses.append(loss)
        if not _finite(work):
            log.wall_time = time.perf_counter() - started
            raise TrainingDiverged(f"weights became non-finite at epoch {epoch}", checkpoint=last_good, log=log)
        last_good = work.copy()

        val_oa = split_accuracy(work, ds, "val", cfg.precision, cfg.algo)
        entry = {"epoch": epoch, "train_loss": float(np.mean(losses)), "val_oa": val_oa,
                 "seconds": time.perf_counter() - t0}
        log.epochs.append(entry)
        if val_oa is not None and (log.best_val_oa is None or val_oa > log.best_val_oa):
            log.best_val_oa, log.best_epoch = val_oa, epoch
            best = work.copy()
        val_text = "-" if val_oa is None else f"{val_oa:.4f}"
        logger.info(f"[epoch {epoch + 1}/{cfg.epochs}] loss {entry['train_loss']:.4f} | val OA {val_text}")

    # val split 이 없으면 마지막 가중치
    final = best if log.best_epoch is not None else work
    log.checkpoint_id = network_id(final)
    log.wall_time = time.perf_counter() - started
    logger.info(f"✅ training done | best epoch {log.best_epoch} | val OA {log.best_val_oa} "
                f"| {log.wall_time:.1f}s")
    return final, log
