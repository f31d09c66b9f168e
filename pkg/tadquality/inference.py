from __future__ import annotations

import dataclasses
import math
from typing import Iterable
from typing import Sequence

import numpy as np

from tadquality import settings
from tadquality.enum import NMSDecay
from tadquality.enum import Preset
from tadquality.exceptions import InvalidParameterException
from tadquality.exceptions import ScoreOutOfRangeException
from tadquality.logging import logger
from tadquality.quality_maps import AnchorScaleSet
from tadquality.quality_maps import Interval
from tadquality.quality_maps import QualityMapPair
from tadquality.quality_maps import tiou


@dataclasses.dataclass(frozen=True)
class PyramidConfig:
    strides: tuple[float, ...] = settings.DEFAULT_PYRAMID_STRIDES
    regression_ranges: tuple[tuple[float, float], ...] = settings.DEFAULT_REGRESSION_RANGES

    def __post_init__(self):
        if len(self.strides) < 1:
            raise InvalidParameterException("a pyramid needs at least one level")
        if any(b <= a for a, b in zip(self.strides, self.strides[1:])):
            raise InvalidParameterException(
                f"pyramid strides must be strictly increasing, got {self.strides}"
            )
        if len(self.regression_ranges) != len(self.strides):
            raise InvalidParameterException(
                "every pyramid level needs a duration range"
            )

    @property
    def levels(self) -> int:
        return len(self.strides)

    def stride(self, level: int) -> float:
        if not 0 <= level < self.levels:
            raise InvalidParameterException(f"no pyramid level {level}")
        return self.strides[level]


def assign_level(duration: float, cfg: PyramidConfig) -> int:
    """Pyramid level whose duration range holds `duration` (in frames)"""
    for level, (low, high) in enumerate(cfg.regression_ranges):
        if low <= duration < high:
            return level
    return 0 if duration < cfg.regression_ranges[0][0] else cfg.levels - 1


@dataclasses.dataclass(frozen=True)
class CoarsePrediction:
    level: int
    location: float
    offset_start: float
    offset_end: float
    class_scores: np.ndarray
    quality: float

    def __post_init__(self):
        if self.offset_start < 0 or self.offset_end < 0:
            raise InvalidParameterException(
                f"coarse offsets must be non-negative, got ({self.offset_start}, {self.offset_end})"
            )

    @property
    def width(self) -> float:
        return self.offset_start + self.offset_end


@dataclasses.dataclass(frozen=True)
class RefinedPrediction:
    delta_start: float
    delta_end: float
    class_scores: np.ndarray
    quality: float


@dataclasses.dataclass(frozen=True)
class Prediction:
    coarse: CoarsePrediction
    refined: RefinedPrediction | None = None


@dataclasses.dataclass(frozen=True)
class Detection:
    interval: Interval
    label: str
    score: float
    video_id: str = ""
    class_score: float = 1.0
    quality: float = 1.0
    p_start: float = 1.0
    p_end: float = 1.0


@dataclasses.dataclass(frozen=True)
class InferenceConfig:
    scale_set: AnchorScaleSet = AnchorScaleSet(*settings.DEFAULT_ANCHOR_SET)
    tau: float = settings.DEFAULT_TAU
    nms_threshold: float = settings.DEFAULT_NMS_THRESHOLD
    score_floor: float = settings.DEFAULT_SCORE_FLOOR
    nms_decay: NMSDecay = NMSDecay.LINEAR
    nms_sigma: float = settings.DEFAULT_NMS_SIGMA
    per_class_nms: bool = False
    use_refinement: bool = True
    use_refined_scores: bool = True
    use_refined_quality: bool = True
    use_boundary_quality: bool = True

    def __post_init__(self):
        if self.tau <= 0:
            raise InvalidParameterException(f"tau must be positive, got {self.tau}")
        if not 0 < self.nms_threshold < 1:
            raise InvalidParameterException(
                f"Soft-NMS threshold must lie in (0, 1), got {self.nms_threshold}"
            )

    @classmethod
    def preset(cls, preset: Preset) -> InferenceConfig:
        return {
            Preset.THUMOS: cls(
                scale_set=AnchorScaleSet(*settings.DEFAULT_ANCHOR_SET),
                nms_threshold=0.5,
            ),
            Preset.ACTIVITYNET: cls(
                scale_set=AnchorScaleSet(*settings.ACTIVITYNET_ANCHOR_SET),
                nms_threshold=0.85,
                per_class_nms=True,
            ),
        }[Preset(preset)]


def decode_coarse(pred: CoarsePrediction, cfg: PyramidConfig) -> Interval:
    """Coarse proposal in global frame units"""
    stride = cfg.stride(pred.level)
    return Interval(
        (pred.location - pred.offset_start) * stride,
        (pred.location + pred.offset_end) * stride,
    )


def refine(
    location: float,
    offset_start: float,
    offset_end: float,
    delta_start: float,
    delta_end: float,
) -> Interval:
    """Shift coarse boundaries by refinement offsets relative to the coarse width

    All values are in level-grid units.
    """
    width = offset_start + offset_end
    start = location - offset_start - 0.5 * delta_start * width
    end = location + offset_end + 0.5 * delta_end * width
    if start > end:
        middle = 0.5 * (start + end)
        return Interval(middle, middle)
    return Interval(start, end)


def fuse_scores(coarse_scores, refined_scores, coarse_quality, refined_quality):
    y = 0.5 * (np.asarray(coarse_scores) + np.asarray(refined_scores))
    q = 0.5 * (coarse_quality + refined_quality)
    return y, q


def scale_index(duration: float, tau: float, scale_set: AnchorScaleSet) -> float:
    """Fractional, 0-based scale index for a proposal of the given duration"""
    if tau <= 0:
        raise InvalidParameterException(f"tau must be positive, got {tau}")
    if scale_set.count == 1:
        return 0.0
    r = duration / tau
    index = (r - scale_set.r_min) / scale_set.spacing
    return float(min(max(index, 0.0), scale_set.count - 1))


def boundary_quality_lookup(quality_map: np.ndarray, t, index) -> float | np.ndarray:
    """Bilinear interpolation over (t, scale index), clamped at the map edges"""
    length, scales = quality_map.shape
    t = np.clip(np.asarray(t, dtype=float), 0.0, length - 1)
    index = np.clip(np.asarray(index, dtype=float), 0.0, scales - 1)
    t0 = np.floor(t).astype(int)
    i0 = np.floor(index).astype(int)
    t1 = np.minimum(t0 + 1, length - 1)
    i1 = np.minimum(i0 + 1, scales - 1)
    wt = t - t0
    wi = index - i0
    value = (
        (1 - wt) * (1 - wi) * quality_map[t0, i0]
        + (1 - wt) * wi * quality_map[t0, i1]
        + wt * (1 - wi) * quality_map[t1, i0]
        + wt * wi * quality_map[t1, i1]
    )
    if value.ndim == 0:
        return float(value)
    return value


def final_score(y: float, q: float, p_start: float, p_end: float) -> float:
    for name, value in (("y", y), ("q", q), ("p_s", p_start), ("p_e", p_end)):
        if not 0.0 <= value <= 1.0:
            raise ScoreOutOfRangeException(name, value)
    return y * q * math.sqrt(p_start * p_end)


def _selection_key(detection: Detection):
    return (
        -detection.score,
        detection.interval.start,
        detection.interval.end,
        detection.label,
        detection.video_id,
    )


def _soft_nms_group(
    detections: list[Detection],
    threshold: float,
    score_floor: float,
    decay: NMSDecay,
    sigma: float,
) -> list[Detection]:
    remaining = [d for d in detections if d.score >= score_floor]
    kept = []
    while remaining:
        best = min(remaining, key=_selection_key)
        remaining.remove(best)
        kept.append(best)
        decayed = []
        for other in remaining:
            overlap = tiou(best.interval, other.interval)
            if decay == NMSDecay.LINEAR:
                factor = 1.0 - overlap if overlap > threshold else 1.0
            else:
                factor = math.exp(-(overlap**2) / sigma)
            score = other.score * factor
            if score >= score_floor:
                decayed.append(dataclasses.replace(other, score=score))
        remaining = decayed
    return kept


def soft_nms(
    detections: Sequence[Detection],
    threshold: float = settings.DEFAULT_NMS_THRESHOLD,
    score_floor: float = settings.DEFAULT_SCORE_FLOOR,
    decay: NMSDecay = NMSDecay.LINEAR,
    sigma: float = settings.DEFAULT_NMS_SIGMA,
    per_class: bool = False,
) -> list[Detection]:
    """Greedy Soft-NMS over one video's detections

    Linear decay multiplies the score of every remaining detection whose
    overlap with the selected one exceeds `threshold` by (1 - overlap).
    Gaussian decay multiplies every remaining score by exp(-overlap^2 / sigma).
    """
    if not 0 < threshold < 1:
        raise InvalidParameterException(
            f"Soft-NMS threshold must lie in (0, 1), got {threshold}"
        )
    decay = NMSDecay(decay)
    if not per_class:
        return _soft_nms_group(list(detections), threshold, score_floor, decay, sigma)

    by_label: dict[str, list[Detection]] = {}
    for detection in detections:
        by_label.setdefault(detection.label, []).append(detection)
    kept = []
    for label in sorted(by_label):
        kept.extend(
            _soft_nms_group(by_label[label], threshold, score_floor, decay, sigma)
        )
    return sorted(kept, key=_selection_key)


def _detect(
    prediction: Prediction,
    maps: QualityMapPair | None,
    class_names: Sequence[str],
    pyramid: PyramidConfig,
    cfg: InferenceConfig,
    video_id: str,
) -> Detection:
    coarse = prediction.coarse
    refined = prediction.refined
    stride = pyramid.stride(coarse.level)

    if refined is not None and cfg.use_refinement:
        interval = refine(
            coarse.location,
            coarse.offset_start,
            coarse.offset_end,
            refined.delta_start,
            refined.delta_end,
        ).scaled(stride)
    else:
        interval = decode_coarse(coarse, pyramid)

    class_scores = np.asarray(coarse.class_scores, dtype=float)
    quality = coarse.quality
    if refined is not None:
        fused_scores, fused_quality = fuse_scores(
            coarse.class_scores, refined.class_scores, coarse.quality, refined.quality
        )
        if cfg.use_refined_scores:
            class_scores = fused_scores
        if cfg.use_refined_quality:
            quality = fused_quality
    label_index = int(np.argmax(class_scores))

    p_start = p_end = 1.0
    if cfg.use_boundary_quality and maps is not None:
        index = scale_index(interval.length, cfg.tau, cfg.scale_set)
        # Rounding in the bilinear weights can leave the unit interval by an ulp
        p_start = min(1.0, max(0.0, boundary_quality_lookup(maps.start_map, interval.start, index)))
        p_end = min(1.0, max(0.0, boundary_quality_lookup(maps.end_map, interval.end, index)))

    y = float(class_scores[label_index])
    return Detection(
        interval=interval,
        label=class_names[label_index],
        score=final_score(y, quality, p_start, p_end),
        video_id=video_id,
        class_score=y,
        quality=quality,
        p_start=p_start,
        p_end=p_end,
    )


def run_pipeline(
    predictions: Iterable[Prediction],
    maps: QualityMapPair | None,
    cfg: InferenceConfig,
    class_names: Sequence[str],
    pyramid: PyramidConfig = PyramidConfig(),
    video_id: str = "",
) -> list[Detection]:
    """Turn one video's per-level predictions into scored, suppressed detections"""
    if maps is not None and maps.scale_set != cfg.scale_set:
        raise InvalidParameterException(
            f"quality maps use anchor set {maps.scale_set}, config expects {cfg.scale_set}"
        )
    if maps is None and cfg.use_boundary_quality:
        logger.warning("No quality maps for video %r, boundary quality disabled", video_id)
    detections = [
        _detect(prediction, maps, class_names, pyramid, cfg, video_id)
        for prediction in predictions
    ]
    logger.debug("Decoded %d detections for video %r", len(detections), video_id)
    return soft_nms(
        detections,
        threshold=cfg.nms_threshold,
        score_floor=cfg.score_floor,
        decay=cfg.nms_decay,
        sigma=cfg.nms_sigma,
        per_class=cfg.per_class_nms,
    )
