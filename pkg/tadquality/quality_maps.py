from __future__ import annotations

import dataclasses
import math
from typing import Sequence

import numpy as np

from tadquality.enum import Side
from tadquality.exceptions import DimensionMismatchException
from tadquality.exceptions import InvalidIntervalException
from tadquality.exceptions import InvalidParameterException
from tadquality.exceptions import InvalidScaleSetException
from tadquality.logging import logger


@dataclasses.dataclass(frozen=True)
class Interval:
    """A real-valued segment in frame-level timesteps"""

    start: float
    end: float

    def __post_init__(self):
        if not (math.isfinite(self.start) and math.isfinite(self.end)):
            raise InvalidIntervalException(self.start, self.end)
        if self.start > self.end:
            raise InvalidIntervalException(self.start, self.end)

    @property
    def length(self) -> float:
        return self.end - self.start

    @property
    def center(self) -> float:
        return 0.5 * (self.start + self.end)

    def boundary(self, side: Side) -> float:
        return self.start if side == Side.START else self.end

    def scaled(self, factor: float) -> Interval:
        return Interval(self.start * factor, self.end * factor)


@dataclasses.dataclass(frozen=True)
class GroundTruthAction:
    interval: Interval
    label: str
    video_id: str = ""


@dataclasses.dataclass(frozen=True)
class AnchorScaleSet:
    r_min: float
    r_max: float
    count: int

    def __post_init__(self):
        if self.count < 1:
            raise InvalidScaleSetException(f"scale count must be positive, got {self.count}")
        if self.r_min <= 0:
            raise InvalidScaleSetException(f"scales must be positive, got {self.r_min}")
        if self.count == 1:
            if self.r_min != self.r_max:
                raise InvalidScaleSetException(
                    "a single-scale set needs r_min == r_max"
                )
        elif not self.r_min < self.r_max:
            raise InvalidScaleSetException(
                f"r_min ({self.r_min}) must be smaller than r_max ({self.r_max})"
            )

    @classmethod
    def single(cls, r: float) -> AnchorScaleSet:
        return cls(r_min=r, r_max=r, count=1)

    @classmethod
    def parse(cls, value: str) -> AnchorScaleSet:
        """Parse `rmin,rmax,count` (or a lone `r` for single-scale mode)"""
        parts = [part.strip() for part in value.split(",")]
        try:
            if len(parts) == 1:
                return cls.single(float(parts[0]))
            r_min, r_max, count = parts
            return cls(r_min=float(r_min), r_max=float(r_max), count=int(count))
        except ValueError as e:
            raise InvalidScaleSetException(f"cannot parse anchor set {value!r}: {e}")

    @property
    def scales(self) -> np.ndarray:
        if self.count == 1:
            return np.array([self.r_min])
        return np.linspace(self.r_min, self.r_max, self.count)

    @property
    def spacing(self) -> float:
        if self.count == 1:
            return 0.0
        return (self.r_max - self.r_min) / (self.count - 1)

    def __str__(self):
        if self.count == 1:
            return f"{self.r_min:g}"
        return f"{self.r_min:g},{self.r_max:g},{self.count}"


@dataclasses.dataclass
class QualityMapPair:
    start_map: np.ndarray
    end_map: np.ndarray
    scale_set: AnchorScaleSet

    def __post_init__(self):
        expected = (self.start_map.shape[0], self.scale_set.count)
        for name, matrix in (("start map", self.start_map), ("end map", self.end_map)):
            if matrix.ndim != 2 or matrix.shape != expected:
                raise DimensionMismatchException(name, expected, matrix.shape)

    @property
    def length(self) -> int:
        return self.start_map.shape[0]

    def side(self, side: Side) -> np.ndarray:
        return self.start_map if side == Side.START else self.end_map


@dataclasses.dataclass(frozen=True)
class PositiveMask:
    start_positives: np.ndarray
    end_positives: np.ndarray

    def side(self, side: Side) -> np.ndarray:
        return self.start_positives if side == Side.START else self.end_positives


@dataclasses.dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray
    skipped: bool = False


@dataclasses.dataclass(frozen=True)
class BemLossResult:
    value: float
    start: LossResult
    end: LossResult
    start_gradient: np.ndarray
    end_gradient: np.ndarray


def _overlap_ratio(a_start, a_end, b_start, b_end):
    # Vectorised tIoU over broadcastable endpoint arrays
    intersection = np.clip(
        np.minimum(a_end, b_end) - np.maximum(a_start, b_start), 0.0, None
    )
    union = (a_end - a_start) + (b_end - b_start) - intersection
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(union > 0, intersection / np.where(union > 0, union, 1.0), 0.0)
    return ratio


def tiou(a: Interval, b: Interval) -> float:
    return float(_overlap_ratio(a.start, a.end, b.start, b.end))


def anchor_interval(t: float, r: float) -> Interval:
    if r <= 0:
        raise InvalidParameterException(f"anchor scale must be positive, got {r}")
    return Interval(t - r / 2, t + r / 2)


def _boundaries(gt: Sequence[GroundTruthAction], side: Side) -> np.ndarray:
    return np.array([action.interval.boundary(side) for action in gt], dtype=float)


def _quality_grid(boundaries: np.ndarray, length: int, scales: np.ndarray) -> np.ndarray:
    """Quality of every (t, i) anchor against the closest boundary region

    Anchors and regions are never clipped to [0, T].
    """
    if boundaries.size == 0:
        return np.zeros((length, scales.size))
    t = np.arange(length, dtype=float)[:, None, None]
    r = scales[None, :, None]
    b = boundaries[None, None, :]
    ratio = _overlap_ratio(t - r / 2, t + r / 2, b - r / 2, b + r / 2)
    return ratio.max(axis=2)


def single_scale_quality(
    gt: Sequence[GroundTruthAction], length: int, r: float, side: Side
) -> np.ndarray:
    if length < 1:
        raise InvalidParameterException(f"map length must be positive, got {length}")
    if r <= 0:
        raise InvalidParameterException(f"anchor scale must be positive, got {r}")
    return _quality_grid(_boundaries(gt, Side(side)), length, np.array([r]))[:, 0]


def multi_scale_quality_maps(
    gt: Sequence[GroundTruthAction], length: int, scale_set: AnchorScaleSet
) -> QualityMapPair:
    if length < 1:
        raise InvalidParameterException(f"map length must be positive, got {length}")
    scales = scale_set.scales
    logger.debug(
        "Computing %dx%d quality maps for %d actions", length, scales.size, len(gt)
    )
    return QualityMapPair(
        start_map=_quality_grid(_boundaries(gt, Side.START), length, scales),
        end_map=_quality_grid(_boundaries(gt, Side.END), length, scales),
        scale_set=scale_set,
    )


def positive_mask(label: QualityMapPair) -> PositiveMask:
    return PositiveMask(
        start_positives=label.start_map > 0, end_positives=label.end_map > 0
    )


def _side_l2(pred: np.ndarray, label: np.ndarray, positives: np.ndarray) -> LossResult:
    count = int(positives.sum())
    if count == 0:
        return LossResult(value=0.0, gradient=np.zeros_like(pred, dtype=float))
    residual = np.where(positives, pred - label, 0.0)
    return LossResult(
        value=float(np.sum(residual**2) / count), gradient=2.0 * residual / count
    )


def bem_loss(
    pred: QualityMapPair, label: QualityMapPair, mask: PositiveMask
) -> BemLossResult:
    """Masked L2 loss between predicted and label quality maps

    `start`/`end` hold each side's mean squared error and its own gradient;
    `start_gradient`/`end_gradient` are the gradients of the averaged loss.
    """
    for side in Side:
        if pred.side(side).shape != label.side(side).shape:
            raise DimensionMismatchException(
                f"{side.value} map", label.side(side).shape, pred.side(side).shape
            )
        if mask.side(side).shape != label.side(side).shape:
            raise DimensionMismatchException(
                f"{side.value} mask", label.side(side).shape, mask.side(side).shape
            )
    start = _side_l2(pred.start_map, label.start_map, mask.start_positives)
    end = _side_l2(pred.end_map, label.end_map, mask.end_positives)
    return BemLossResult(
        value=0.5 * (start.value + end.value),
        start=start,
        end=end,
        start_gradient=0.5 * start.gradient,
        end_gradient=0.5 * end.gradient,
    )
