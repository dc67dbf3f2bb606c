"""Composite training objective.

Three terms: a hard-example-thresholded squared error on the generated
boundary map, plus weighted BCE and weighted IoU on the segmentation
head. The per-pixel weight emphasizes mask transition zones via the gap
between a local average of the ground truth and the ground truth itself.

Batched inputs are reduced per sample first and then averaged, so the
loss scale does not depend on batch size.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_EPS = 1e-7


@dataclass
class LossConfig:
    lam: float = 0.01  # squared-residual threshold; residuals at or below it are ignored
    weight_kernel: int = 31
    weight_gain: float = 5.0
    wbce_normalize: bool = True  # divide by the weight total; False gives the literal sum
    bdm_reduction: str = "mean"  # "mean" keeps lam resolution-independent; "sum" is literal

    def validate(self) -> "LossConfig":
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.weight_kernel < 1 or self.weight_kernel % 2 == 0:
            raise ValueError("weight_kernel must be a positive odd number")
        if self.bdm_reduction not in ("mean", "sum"):
            raise ValueError("bdm_reduction must be 'mean' or 'sum'")
        return self


@dataclass
class LossBreakdown:
    total: torch.Tensor
    bdm: torch.Tensor
    wbce: torch.Tensor
    wiou: torch.Tensor


def _check_same_shape(*tensors):
    shapes = {tuple(t.shape) for t in tensors}
    if len(shapes) > 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def _check_binary(gt):
    if not bool(((gt == 0) | (gt == 1)).all()):
        raise ValueError("ground truth must contain only 0 and 1")


def _per_sample(x):
    return x.reshape(x.shape[0], -1)


def weight_map(gt, cfg: LossConfig):
    """Transition-zone weights: 1 + gain * |avgpool_k(gt) - gt|.

    Border windows average over in-image pixels only, so constant masks
    produce a uniform weight of exactly 1.
    """
    _check_binary(gt)
    k = cfg.weight_kernel
    pooled = F.avg_pool2d(gt, k, stride=1, padding=k // 2, count_include_pad=False)
    return 1.0 + cfg.weight_gain * (pooled - gt).abs()


def bdm_loss(pred_bdm, target_bdm, cfg: LossConfig):
    """Squared error on the boundary map, keeping only pixels whose
    squared residual strictly exceeds the threshold; ignored pixels
    contribute neither value nor gradient."""
    _check_same_shape(pred_bdm, target_bdm)
    sq = (pred_bdm - target_bdm) ** 2
    kept = sq * (sq > cfg.lam)
    per_sample = _per_sample(kept)
    if cfg.bdm_reduction == "mean":
        return per_sample.mean(dim=1).mean()
    return per_sample.sum(dim=1).mean()


def weighted_bce(pred, gt, weights, from_logits: bool = False, normalize: bool = True):
    """Weighted binary cross entropy.

    ``pred`` holds probabilities unless ``from_logits`` is set, in which
    case the numerically fused formulation is used. With ``normalize``
    the weighted sum is divided by the weight total per sample.
    """
    _check_same_shape(pred, gt, weights)
    _check_binary(gt)
    if from_logits:
        per_pixel = F.binary_cross_entropy_with_logits(pred, gt, reduction="none")
    else:
        s = pred.clamp(PROB_EPS, 1.0 - PROB_EPS)
        per_pixel = -(gt * torch.log(s) + (1.0 - gt) * torch.log(1.0 - s))
    weighted = _per_sample(weights * per_pixel).sum(dim=1)
    if normalize:
        weighted = weighted / _per_sample(weights).sum(dim=1)
    return weighted.mean()


def weighted_iou(pred, gt, weights, from_logits: bool = False):
    """Weighted IoU loss: 1 - sum(w*g*s) / sum(w*(g + s - g*s)).

    A zero denominator (empty ground truth and zero prediction) counts
    as loss 0.
    """
    _check_same_shape(pred, gt, weights)
    _check_binary(gt)
    s = torch.sigmoid(pred) if from_logits else pred
    inter = _per_sample(weights * gt * s).sum(dim=1)
    union = _per_sample(weights * (gt + s - gt * s)).sum(dim=1)
    safe = torch.where(union > 0, union, torch.ones_like(union))
    loss = torch.where(union > 0, 1.0 - inter / safe, torch.zeros_like(union))
    return loss.mean()


def total_loss(pred, gt_mask, target_bdm, cfg: LossConfig) -> LossBreakdown:
    """Sum of the three terms for one prediction pair, with the weight
    map derived from the ground-truth mask. ``pred`` is a
    ``SegmentationOutput`` (segmentation logits plus generated boundary
    map); components are returned individually for logging."""
    weights = weight_map(gt_mask, cfg)
    bdm_term = bdm_loss(pred.generated_bdm, target_bdm, cfg)
    wbce_term = weighted_bce(
        pred.seg_logits, gt_mask, weights, from_logits=True, normalize=cfg.wbce_normalize
    )
    wiou_term = weighted_iou(pred.seg_logits, gt_mask, weights, from_logits=True)
    return LossBreakdown(
        total=bdm_term + wbce_term + wiou_term,
        bdm=bdm_term,
        wbce=wbce_term,
        wiou=wiou_term,
    )
