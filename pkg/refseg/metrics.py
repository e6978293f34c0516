# metrics.py
"""Segmentation metrics: IoU, Pr@X, object-centric IoU, boundary F and J&F."""
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.ndimage import binary_dilation, binary_erosion, generate_binary_structure

from refseg.errors import ArgumentError

THRESHOLDS = (0.5, 0.7, 0.9)
BOUNDARY_FRACTION = 0.008


def _binary_pair(pred, gt):
    pred = np.asarray(pred).astype(bool)
    gt = np.asarray(gt).astype(bool)
    if pred.shape != gt.shape:
        raise ArgumentError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    return pred, gt


def iou(pred, gt) -> float:
    """Region similarity J. 1.0 when both masks are empty."""
    pred, gt = _binary_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def precision_at(ious: Sequence[float], thresholds: Sequence[float] = THRESHOLDS) -> Dict[float, float]:
    """Fraction of IoUs strictly above each threshold."""
    values = np.asarray(list(ious), dtype=np.float64)
    if values.size == 0:
        raise ArgumentError("precision_at needs at least one IoU")
    return {float(t): float((values > t).mean()) for t in thresholds}


def oc_iou(gt, preds: Sequence) -> float:
    """Intersection of the GT with every prediction over the union of all of them."""
    if len(preds) == 0:
        raise ArgumentError("oc_iou needs at least one prediction")
    gt = np.asarray(gt).astype(bool)
    inter = gt.copy()
    union = gt.copy()
    for p in preds:
        p, _ = _binary_pair(p, gt)
        inter &= p
        union |= p
    total = union.sum()
    if total == 0:
        return 1.0
    return float(inter.sum() / total)


def oc_iou_total(pairs: Sequence) -> float:
    """Mean Oc-IoU over (gt, preds) pairs, one per object."""
    if len(pairs) == 0:
        raise ArgumentError("oc_iou_total needs at least one object")
    return float(np.mean([oc_iou(gt, preds) for gt, preds in pairs]))


def boundary(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour or touching the image edge."""
    mask = np.asarray(mask).astype(bool)
    cross = generate_binary_structure(2, 1)
    return mask & ~binary_erosion(mask, structure=cross, border_value=0)


def _disc(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius:radius + 1, -radius:radius + 1]
    return xx ** 2 + yy ** 2 <= radius ** 2


def default_radius(shape) -> int:
    return int(math.ceil(BOUNDARY_FRACTION * math.hypot(*shape[:2])))


def boundary_f(pred, gt, radius: Optional[int] = None) -> float:
    pred, gt = _binary_pair(pred, gt)
    if radius is None:
        radius = default_radius(gt.shape)
    pred_b, gt_b = boundary(pred), boundary(gt)
    if not pred_b.any() and not gt_b.any():
        return 1.0
    if not pred_b.any() or not gt_b.any():
        return 0.0
    if radius > 0:
        gt_zone = binary_dilation(gt_b, structure=_disc(radius))
        pred_zone = binary_dilation(pred_b, structure=_disc(radius))
    else:
        gt_zone, pred_zone = gt_b, pred_b
    precision = (pred_b & gt_zone).sum() / pred_b.sum()
    recall = (gt_b & pred_zone).sum() / gt_b.sum()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def jf_mean(j_values: Sequence[float], f_values: Sequence[float]) -> float:
    if len(j_values) != len(f_values):
        raise ArgumentError(f"J has {len(j_values)} values, F has {len(f_values)}")
    if len(j_values) == 0:
        raise ArgumentError("jf_mean needs at least one value")
    return float((np.mean(j_values) + np.mean(f_values)) / 2)


@dataclass
class EvalReport:
    miou: float
    precision_at: Dict[float, float]
    oc_iou: float
    j_mean: float
    f_mean: float
    jf_mean: float
    num_samples: int
    records: List[dict] = field(default_factory=list, repr=False)

    def to_dict(self) -> dict:
        data = asdict(self)
        data.pop("records")
        data["precision_at"] = {f"{k:g}": v for k, v in self.precision_at.items()}
        return data

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.records)


def summarize(records: List[dict], oc_ious: Sequence[float]) -> EvalReport:
    """Aggregates per-sample records carrying 'iou' and 'f' plus per-object Oc-IoU values."""
    if not records:
        raise ArgumentError("no samples to evaluate")
    df = pd.DataFrame(records)
    j = df["iou"].tolist()
    f = df["f"].tolist()
    return EvalReport(
        miou=float(np.mean(j)),
        precision_at=precision_at(j),
        oc_iou=float(np.mean(oc_ious)) if len(oc_ious) else float("nan"),
        j_mean=float(np.mean(j)),
        f_mean=float(np.mean(f)),
        jf_mean=jf_mean(j, f),
        num_samples=len(records),
        records=list(records),
    )
