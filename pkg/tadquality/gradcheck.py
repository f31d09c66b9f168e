"""Finite-difference verification of the analytic loss gradients"""
from __future__ import annotations

import dataclasses
from typing import Callable
from typing import Collection

import numpy as np

from tadquality import settings
from tadquality.losses import focal_loss
from tadquality.losses import giou_loss_1d
from tadquality.losses import l1_refine_loss
from tadquality.losses import quality_bce_loss
from tadquality.quality_maps import AnchorScaleSet
from tadquality.quality_maps import Interval
from tadquality.quality_maps import QualityMapPair
from tadquality.quality_maps import bem_loss
from tadquality.quality_maps import positive_mask
from tadquality.rng import seeded_generator

LOSS_NAMES = ("focal", "giou_1d", "l1_refine", "quality_bce", "bem_l2")

# Keeps sampled points this far from the non-differentiable kinks
KINK_MARGIN = 1e-3


@dataclasses.dataclass(frozen=True)
class GradCheckRow:
    loss: str
    value: float
    max_relative_error: float
    passed: bool


def central_difference(
    fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    step: float = settings.FINITE_DIFFERENCE_STEP,
) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    gradient = np.zeros_like(x)
    for index in np.ndindex(x.shape):
        forward = x.copy()
        backward = x.copy()
        forward[index] += step
        backward[index] -= step
        gradient[index] = (fn(forward) - fn(backward)) / (2 * step)
    return gradient


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return float(np.max(np.abs(analytic - numeric) / scale))


def _focal_point(rng: np.random.Generator):
    classes = int(rng.integers(1, 5))
    probs = rng.uniform(0.05, 0.95, classes)
    target = None if rng.uniform() < 0.25 else int(rng.integers(0, classes))

    def fn(x):
        return focal_loss(x, target).value

    return probs, fn, focal_loss(probs, target)


def _separated(values, margin: float) -> bool:
    values = sorted(values)
    return all(b - a > margin for a, b in zip(values, values[1:]))


def _giou_point(rng: np.random.Generator):
    while True:
        points = rng.uniform(0.0, 10.0, 4)
        pred = Interval(*sorted(points[:2]))
        gt = Interval(*sorted(points[2:]))
        if _separated(points, KINK_MARGIN):
            break
    x = np.array([pred.start, pred.end])

    def fn(v):
        return giou_loss_1d(Interval(v[0], v[1]), gt).value

    return x, fn, giou_loss_1d(pred, gt)


def _l1_point(rng: np.random.Generator):
    coarse = rng.uniform(0.5, 10.0, 2)
    gt = rng.uniform(0.5, 10.0, 2)
    width = float(coarse.sum())
    target = 2.0 * (gt - coarse) / width
    while True:
        deltas = rng.uniform(-1.0, 1.0, 2)
        if np.all(np.abs(deltas - target) > KINK_MARGIN):
            break

    def fn(x):
        return l1_refine_loss(x, gt, coarse, width).value

    return deltas, fn, l1_refine_loss(deltas, gt, coarse, width)


def _bce_point(rng: np.random.Generator):
    points = np.sort(rng.uniform(0.0, 10.0, 4))
    proposal = Interval(points[0], points[2])
    gt = Interval(points[1], points[3])
    quality = np.array([rng.uniform(0.05, 0.95)])

    def fn(x):
        return quality_bce_loss(float(x[0]), proposal, gt).value

    return quality, fn, quality_bce_loss(float(quality[0]), proposal, gt)


def _bem_point(rng: np.random.Generator):
    scale_set = AnchorScaleSet(1.0, 5.0, 3)
    length = 6
    label = QualityMapPair(
        start_map=np.where(rng.uniform(size=(length, 3)) < 0.5, rng.uniform(size=(length, 3)), 0.0),
        end_map=np.where(rng.uniform(size=(length, 3)) < 0.5, rng.uniform(size=(length, 3)), 0.0),
        scale_set=scale_set,
    )
    mask = positive_mask(label)
    x = rng.uniform(size=(2, length, 3))

    def fn(v):
        pred = QualityMapPair(start_map=v[0], end_map=v[1], scale_set=scale_set)
        return bem_loss(pred, label, mask).value

    result = bem_loss(
        QualityMapPair(start_map=x[0], end_map=x[1], scale_set=scale_set), label, mask
    )
    gradient = np.stack([result.start_gradient, result.end_gradient])
    return x, fn, dataclasses.replace(result.start, value=result.value, gradient=gradient)


_POINT_SAMPLERS = {
    "focal": _focal_point,
    "giou_1d": _giou_point,
    "l1_refine": _l1_point,
    "quality_bce": _bce_point,
    "bem_l2": _bem_point,
}


def check_losses(
    points: int = settings.DEFAULT_GRADCHECK_POINTS,
    seed: int = settings.DEFAULT_SEED,
    wrong_sign: Collection[str] = (),
    tolerance: float = settings.GRADIENT_TOLERANCE,
    step: float = settings.FINITE_DIFFERENCE_STEP,
) -> list[GradCheckRow]:
    """One row per loss: the worst relative error over `points` random points

    Losses listed in `wrong_sign` have their analytic gradient negated, which
    must make them fail.
    """
    rows = []
    for offset, name in enumerate(LOSS_NAMES):
        rng = seeded_generator(seed, offset)
        worst = 0.0
        value = 0.0
        for _ in range(points):
            x, fn, result = _POINT_SAMPLERS[name](rng)
            analytic = -result.gradient if name in wrong_sign else result.gradient
            worst = max(worst, relative_error(analytic, central_difference(fn, x, step)))
            value = result.value
        rows.append(
            GradCheckRow(
                loss=name, value=value, max_relative_error=worst, passed=worst <= tolerance
            )
        )
    return rows
