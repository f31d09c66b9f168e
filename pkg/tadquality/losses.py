from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from tadquality import settings
from tadquality.enum import Preset
from tadquality.inference import refine
from tadquality.logging import logger
from tadquality.quality_maps import Interval
from tadquality.quality_maps import LossResult
from tadquality.quality_maps import tiou


@dataclasses.dataclass(frozen=True)
class LossWeights:
    eta: float = settings.DEFAULT_LOSS_ETA
    lambda_: float = settings.DEFAULT_LOSS_LAMBDA
    gamma: float = settings.DEFAULT_LOSS_GAMMA

    @classmethod
    def preset(cls, preset: Preset) -> LossWeights:
        return {
            Preset.THUMOS: cls(eta=5.0, lambda_=1.0, gamma=0.5),
            Preset.ACTIVITYNET: cls(eta=5.0, lambda_=1.0, gamma=1.0),
        }[Preset(preset)]


def _clamp(p):
    return np.clip(p, settings.EPSILON, 1.0 - settings.EPSILON)


def focal_loss(
    probs,
    target: int | None,
    alpha: float = settings.DEFAULT_FOCAL_ALPHA,
    gamma: float = settings.DEFAULT_FOCAL_GAMMA,
) -> LossResult:
    """Per-class binary focal loss; `target=None` marks a background location"""
    p = _clamp(np.atleast_1d(np.asarray(probs, dtype=float)))
    positive = np.zeros(p.shape, dtype=bool)
    if target is not None:
        positive[target] = True

    log_p = np.log(p)
    log_not_p = np.log1p(-p)
    pos_loss = -alpha * (1 - p) ** gamma * log_p
    neg_loss = -(1 - alpha) * p**gamma * log_not_p
    # gamma * x**(gamma-1) is taken as 0 when gamma == 0
    if gamma == 0:
        pos_slope = np.zeros_like(p)
        neg_slope = np.zeros_like(p)
    else:
        pos_slope = gamma * (1 - p) ** (gamma - 1)
        neg_slope = gamma * p ** (gamma - 1)
    pos_grad = alpha * (pos_slope * log_p - (1 - p) ** gamma / p)
    neg_grad = -(1 - alpha) * (neg_slope * log_not_p - p**gamma / (1 - p))

    loss = np.where(positive, pos_loss, neg_loss)
    gradient = np.where(positive, pos_grad, neg_grad)
    return LossResult(value=float(loss.sum()), gradient=gradient)


def giou_loss_1d(pred: Interval, gt: Interval) -> LossResult:
    """1 - GIoU with its gradient w.r.t. (pred.start, pred.end)"""
    overlap = min(pred.end, gt.end) - max(pred.start, gt.start)
    intersection = max(overlap, 0.0)
    union = pred.length + gt.length - intersection
    hull = max(pred.end, gt.end) - min(pred.start, gt.start)

    d_intersection = np.zeros(2)
    if overlap > 0:
        d_intersection[0] = -1.0 if pred.start > gt.start else 0.0
        d_intersection[1] = 1.0 if pred.end < gt.end else 0.0
    d_union = np.array([-1.0, 1.0]) - d_intersection
    d_hull = np.array(
        [-1.0 if pred.start < gt.start else 0.0, 1.0 if pred.end > gt.end else 0.0]
    )

    if union > 0:
        iou = intersection / union
        d_iou = (d_intersection * union - intersection * d_union) / union**2
    else:
        iou, d_iou = 0.0, np.zeros(2)
    if hull > 0:
        giou = iou - (hull - union) / hull
        d_giou = d_iou + (d_union * hull - union * d_hull) / hull**2
    else:
        giou, d_giou = iou, d_iou
    return LossResult(value=1.0 - giou, gradient=-d_giou)


def l1_refine_loss(
    predicted_deltas,
    gt_offsets,
    coarse_offsets,
    coarse_width: float,
) -> LossResult:
    """L1 distance between refinement offsets and 2 * (delta - coarse) / width"""
    predicted_deltas = np.asarray(predicted_deltas, dtype=float)
    if coarse_width <= 0:
        logger.warning("Skipping refinement loss for a zero-length coarse proposal")
        return LossResult(value=0.0, gradient=np.zeros_like(predicted_deltas), skipped=True)
    target = 2.0 * (np.asarray(gt_offsets, dtype=float) - np.asarray(coarse_offsets, dtype=float)) / coarse_width
    residual = predicted_deltas - target
    return LossResult(value=float(np.abs(residual).sum()), gradient=np.sign(residual))


def quality_bce_loss(quality: float, proposal: Interval, gt: Interval) -> LossResult:
    target = tiou(proposal, gt)
    q = float(_clamp(quality))
    value = -(target * np.log(q) + (1 - target) * np.log1p(-q))
    gradient = (q - target) / (q * (1 - q))
    return LossResult(value=float(value), gradient=np.array([gradient]))


@dataclasses.dataclass(frozen=True)
class RemSample:
    """One positive location with its coarse and refined outputs

    Offsets are in level-grid units measured from `location`.
    """

    location: float
    gt: Interval
    label_index: int
    offset_start: float
    offset_end: float
    class_scores: np.ndarray
    quality: float
    delta_start: float
    delta_end: float
    refined_class_scores: np.ndarray
    refined_quality: float

    @property
    def coarse_interval(self) -> Interval:
        return Interval(self.location - self.offset_start, self.location + self.offset_end)

    @property
    def refined_interval(self) -> Interval:
        return refine(
            self.location, self.offset_start, self.offset_end, self.delta_start, self.delta_end
        )

    @property
    def gt_offsets(self) -> tuple[float, float]:
        return self.location - self.gt.start, self.gt.end - self.location


@dataclasses.dataclass(frozen=True)
class BackgroundSample:
    class_scores: np.ndarray
    refined_class_scores: np.ndarray


@dataclasses.dataclass(frozen=True)
class RemTerms:
    coarse_loc: float = 0.0
    coarse_cls: float = 0.0
    coarse_quality: float = 0.0
    refined_loc: float = 0.0
    refined_cls: float = 0.0
    refined_quality: float = 0.0

    def weighted(self, weights: LossWeights) -> float:
        return (
            self.coarse_loc
            + weights.lambda_ * self.coarse_cls
            + weights.gamma * self.coarse_quality
            + self.refined_loc
            + weights.lambda_ * self.refined_cls
            + weights.gamma * self.refined_quality
        )


def rem_terms(
    positives: Sequence[RemSample],
    background: Sequence[BackgroundSample] = (),
    alpha: float = settings.DEFAULT_FOCAL_ALPHA,
    gamma: float = settings.DEFAULT_FOCAL_GAMMA,
) -> RemTerms:
    """Average the six region-module terms over the positive locations

    Classification terms average over positives plus background locations.
    """
    if not positives:
        return RemTerms()
    count = len(positives)
    cls_count = count + len(background)

    coarse_cls = sum(
        [focal_loss(s.class_scores, s.label_index, alpha, gamma).value for s in positives]
        + [focal_loss(b.class_scores, None, alpha, gamma).value for b in background]
    )
    refined_cls = sum(
        [
            focal_loss(s.refined_class_scores, s.label_index, alpha, gamma).value
            for s in positives
        ]
        + [focal_loss(b.refined_class_scores, None, alpha, gamma).value for b in background]
    )
    return RemTerms(
        coarse_loc=sum(giou_loss_1d(s.coarse_interval, s.gt).value for s in positives) / count,
        coarse_cls=coarse_cls / cls_count,
        coarse_quality=sum(
            quality_bce_loss(s.quality, s.coarse_interval, s.gt).value for s in positives
        ) / count,
        refined_loc=sum(
            l1_refine_loss(
                (s.delta_start, s.delta_end),
                s.gt_offsets,
                (s.offset_start, s.offset_end),
                s.offset_start + s.offset_end,
            ).value
            for s in positives
        ) / count,
        refined_cls=refined_cls / cls_count,
        refined_quality=sum(
            quality_bce_loss(s.refined_quality, s.refined_interval, s.gt).value
            for s in positives
        ) / count,
    )


def rem_loss(
    positives: Sequence[RemSample],
    weights: LossWeights = LossWeights(),
    background: Sequence[BackgroundSample] = (),
) -> float:
    return rem_terms(positives, background).weighted(weights)


def total_loss(rem: float, bem: float, eta: float = settings.DEFAULT_LOSS_ETA) -> float:
    return rem + eta * bem
