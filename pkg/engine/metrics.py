# engine/metrics.py
"""
[평가 지표] OA / AA / Kappa
- 혼동행렬은 sklearn 으로 만들고, 지표 산술은 metrics_from_confusion 한 곳에서만 합니다.
- 예측 단계(prediction phase) 평가는 train / val / unlabeled 픽셀을 제외합니다.
"""
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd
from sklearn.metrics import confusion_matrix

from engine.errors import TppiError, ShapeError
from infra.utils import get_logger

logger = get_logger("Metrics")


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: Dict[int, Optional[float]]      # class id -> recall (GT 에 없는 클래스는 None)
    confusion: np.ndarray                      # rows = GT, cols = prediction
    classes: List[int] = field(default_factory=list)

    @property
    def n(self):
        return int(self.confusion.sum())

    def to_dict(self):
        return {
            "oa": self.oa, "aa": self.aa, "kappa": self.kappa, "n": self.n,
            "classes": list(self.classes),
            "per_class": {str(k): v for k, v in self.per_class.items()},
            "confusion": self.confusion.tolist(),
        }


def metrics_from_confusion(cm, classes=None) -> MetricsReport:
    cm = np.asarray(cm, dtype=np.int64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError(f"confusion matrix must be square, got {cm.shape}", axis="classes")
    classes = list(classes) if classes is not None else list(range(1, cm.shape[0] + 1))
    total = int(cm.sum())
    if total == 0:
        raise TppiError("no included pixels to evaluate")

    rows = cm.sum(axis=1)
    cols = cm.sum(axis=0)
    p_o = float(np.trace(cm)) / total
    p_e = float(np.dot(rows, cols)) / (total * total)
    if p_e >= 1.0:
        kappa = 1.0 if p_o >= 1.0 else 0.0
    else:
        kappa = (p_o - p_e) / (1.0 - p_e)

    per_class = {}
    for i, cls in enumerate(classes):
        per_class[cls] = float(cm[i, i]) / rows[i] if rows[i] else None
    present = [v for v in per_class.values() if v is not None]
    aa = float(np.mean(present))
    return MetricsReport(p_o, aa, kappa, per_class, cm, classes)


def evaluate_map(cmap, gt, exclude=None) -> MetricsReport:
    """
    cmap: ClassificationMap, gt: GroundTruth (또는 (H, W) 라벨 배열)
    exclude: (H, W) bool mask, True 인 픽셀은 평가에서 제외 (train/val 픽셀)
    """
    labels = np.asarray(getattr(gt, "labels", gt))
    pred = np.asarray(cmap.class_of)
    if labels.shape != pred.shape:
        raise ShapeError(f"map {pred.shape} and ground truth {labels.shape} differ in size", axis="rows")

    include = labels > 0
    if exclude is not None:
        exclude = np.asarray(exclude, dtype=bool)
        if exclude.shape != labels.shape:
            raise ShapeError(f"exclude mask {exclude.shape} does not match ground truth {labels.shape}",
                             axis="rows")
        include &= ~exclude
    if not include.any():
        raise TppiError("no included pixels to evaluate")

    y_true = labels[include].astype(np.int64)
    y_pred = pred[include].astype(np.int64)
    if np.any(y_pred == 0):
        raise TppiError(f"{int(np.sum(y_pred == 0))} evaluated pixels were never classified")

    num_classes = int(max(getattr(gt, "num_classes", 0) or 0, y_true.max(), y_pred.max()))
    classes = list(range(1, num_classes + 1))
    cm = confusion_matrix(y_true, y_pred, labels=classes)
    report = metrics_from_confusion(cm, classes)
    logger.info(f"📊 OA {report.oa:.4f} | AA {report.aa:.4f} | Kappa {report.kappa:.4f} (n={report.n})")
    return report


def summarize_runs(reports: List[MetricsReport]) -> pd.DataFrame:
    """여러 seed 의 결과를 mean / std 로 요약 (행: oa, aa, kappa, class_<id>)"""
    if not reports:
        raise TppiError("no runs to summarize")
    rows = []
    for r in reports:
        row = {"oa": r.oa, "aa": r.aa, "kappa": r.kappa}
        row.update({f"class_{k}": v for k, v in r.per_class.items()})
        rows.append(row)
    frame = pd.DataFrame(rows, dtype=float)
    # 단일 run 이면 std 는 0
    return pd.DataFrame({"mean": frame.mean(), "std": frame.std(ddof=0)})
