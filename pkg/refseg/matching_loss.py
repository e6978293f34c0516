# matching_loss.py
"""Hungarian matching of predictions to the referred object and the composite training loss."""
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import torch
import torch.nn.functional as F
from scipy.optimize import linear_sum_assignment
from torch import Tensor

from refseg.config import LossConfig
from refseg.decoder_head import PredictionSet
from refseg.errors import ArgumentError
from refseg.models import InstanceAnnotation

logger = logging.getLogger(__name__)

MASK_STRIDE = 4


@dataclass
class Assignment:
    pairs: Dict[int, int]   # row -> column
    cost: float


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.shape[0] == 0 or cost.shape[1] == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def _lexicographic_assignment(cost: np.ndarray) -> Dict[int, int]:
    """
    Among all optimal assignments of every row (rows <= cols), the one whose
    column sequence is lexicographically smallest.
    """
    n, m = cost.shape
    remaining = _optimal_cost(cost)
    free = list(range(m))
    pairs = {}
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()))
    for row in range(n):
        rest = np.arange(row + 1, n)
        for col in free:
            others = [c for c in free if c != col]
            sub = _optimal_cost(cost[np.ix_(rest, others)]) if len(rest) else 0.0
            if abs(cost[row, col] + sub - remaining) <= tol * n:
                pairs[row] = col
                free.remove(col)
                remaining = sub
                break
    return pairs


def hungarian(cost: Union[np.ndarray, Sequence[Sequence[float]]]) -> Assignment:
    """
    Minimum-cost assignment of an n×m cost matrix. Ties are broken by the lowest
    row, then the lowest column. With more rows than columns the transpose is solved.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise ArgumentError(f"cost must be a matrix, got shape {cost.shape}")
    if not np.isfinite(cost).all():
        raise ArgumentError("cost matrix contains NaN or infinite entries")
    if cost.shape[0] <= cost.shape[1]:
        pairs = _lexicographic_assignment(cost)
    else:
        pairs = {r: c for c, r in _lexicographic_assignment(cost.T).items()}
        pairs = dict(sorted(pairs.items()))
    total = float(sum(cost[r, c] for r, c in pairs.items()))
    return Assignment(pairs=pairs, cost=total)


def downsample_mask(mask: Union[np.ndarray, Tensor], stride: int = MASK_STRIDE) -> Tensor:
    """Area-averages stride×stride blocks and keeps cells with more than half occupancy."""
    tensor = torch.as_tensor(np.asarray(mask) if not isinstance(mask, Tensor) else mask).float()
    lead = tensor.shape[:-2]
    pooled = F.avg_pool2d(tensor.reshape(-1, 1, *tensor.shape[-2:]), kernel_size=stride)
    return (pooled > 0.5).reshape(*lead, *pooled.shape[-2:])


def dice_loss(pred_probs: Tensor, gt: Tensor, eps: float = 1.0) -> Tensor:
    """1 - (2·Σpg + eps) / (Σp + Σg + eps) over all elements."""
    if pred_probs.shape != gt.shape:
        raise ArgumentError(f"shape mismatch: {tuple(pred_probs.shape)} vs {tuple(gt.shape)}")
    gt = gt.to(pred_probs.dtype)
    return 1 - (2 * (pred_probs * gt).sum() + eps) / (pred_probs.sum() + gt.sum() + eps)


def bce_loss(pred_logits: Tensor, gt: Tensor) -> Tensor:
    if pred_logits.shape != gt.shape:
        raise ArgumentError(f"shape mismatch: {tuple(pred_logits.shape)} vs {tuple(gt.shape)}")
    return F.binary_cross_entropy_with_logits(pred_logits, gt.to(pred_logits.dtype))


def _per_query_mask_cost(mask_logits: Tensor, gt: Tensor, eps: float) -> Tensor:
    """BCE + Dice of each of N masks against one GT mask; N×h×w and h×w in, N out."""
    gt = gt.to(mask_logits.dtype).expand_as(mask_logits)
    bce = F.binary_cross_entropy_with_logits(mask_logits, gt, reduction="none").flatten(1).mean(1)
    probs = mask_logits.sigmoid().flatten(1)
    g = gt.flatten(1)
    dice = 1 - (2 * (probs * g).sum(1) + eps) / (probs.sum(1) + g.sum(1) + eps)
    return bce + dice


@dataclass
class MatchResult:
    best_index: int
    cost: float
    costs: np.ndarray


def match(pred: PredictionSet, gt: Union[InstanceAnnotation, Tensor, np.ndarray],
          cls_weight: float = 2.0, mask_weight: float = 5.0, eps: float = 1.0) -> MatchResult:
    """
    Picks the query that best explains the single referred object.
    cost(n) = cls_weight·(-p_n) + mask_weight·(BCE + Dice); gt is either an
    annotation at full resolution or a mask already at the prediction's resolution.
    """
    if isinstance(gt, InstanceAnnotation):
        gt = downsample_mask(gt.mask)
    gt = torch.as_tensor(gt)
    if not bool(gt.any()):
        raise ArgumentError("ground-truth mask is empty")
    if tuple(gt.shape) != tuple(pred.mask_logits.shape[-2:]):
        raise ArgumentError(f"GT mask {tuple(gt.shape)} does not match predictions {tuple(pred.mask_logits.shape[-2:])}")
    with torch.no_grad():
        costs = cls_weight * (-pred.probs) + mask_weight * _per_query_mask_cost(pred.mask_logits, gt, eps)
    costs = costs.detach().cpu().double().numpy()
    # one GT column: the assignment keeps exactly one query row
    assignment = hungarian(costs[:, None])
    best = next(iter(assignment.pairs))
    return MatchResult(best_index=int(best), cost=float(costs[best]), costs=costs)


@dataclass
class LossBreakdown:
    total: Tensor
    cls: Tensor
    mask_bce: Tensor
    mask_dice: Tensor
    mcc: Tensor

    def as_dict(self) -> Dict[str, float]:
        return {name: float(getattr(self, name).detach()) for name in ("total", "cls", "mask_bce", "mask_dice", "mcc")}


def set_loss(pred: PredictionSet, gt_masks: Tensor, config: LossConfig):
    """(cls, bce, dice) of one batched prediction set, averaged over the batch, plus matched indices."""
    cls_terms, bce_terms, dice_terms, matched = [], [], [], []
    for b in range(gt_masks.shape[0]):
        item = pred[b]
        result = match(item, gt_masks[b], config.cls_weight, config.mask_weight, config.dice_eps)
        target = torch.zeros_like(item.prob_logits)
        target[result.best_index] = 1.0
        cls_terms.append(F.binary_cross_entropy_with_logits(item.prob_logits, target))
        bce_terms.append(bce_loss(item.mask_logits[result.best_index], gt_masks[b]))
        dice_terms.append(dice_loss(item.mask_logits[result.best_index].sigmoid(), gt_masks[b], config.dice_eps))
        matched.append(result.best_index)
    return torch.stack(cls_terms).mean(), torch.stack(bce_terms).mean(), torch.stack(dice_terms).mean(), matched


def total_loss(predictions: List[PredictionSet], gt_masks: Tensor, config: LossConfig,
               mcc: Optional[Tensor] = None, mcc_weight: Optional[float] = None) -> LossBreakdown:
    """
    cls_weight·cls + mask_weight·(bce + dice) + mcc_weight·mcc.

    predictions is the list emitted by the decoder, final set last. Under deep
    supervision every set is matched on its own and the terms are averaged over
    sets; otherwise only the final set counts. A missing mcc term counts as 0.
    """
    sets = predictions if config.deep_supervision else predictions[-1:]
    terms = [set_loss(p, gt_masks, config)[:3] for p in sets]
    cls = torch.stack([t[0] for t in terms]).mean()
    bce = torch.stack([t[1] for t in terms]).mean()
    dice = torch.stack([t[2] for t in terms]).mean()
    weight = config.mcc_weight if mcc_weight is None else mcc_weight
    if mcc is None:
        mcc = torch.zeros((), dtype=cls.dtype)
    total = config.cls_weight * cls + config.mask_weight * (bce + dice) + weight * mcc
    return LossBreakdown(total=total, cls=cls, mask_bce=bce, mask_dice=dice, mcc=mcc)
