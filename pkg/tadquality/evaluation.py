from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np
import pandas as pd
from scipy import stats

from tadquality import settings
from tadquality.enum import APInterpolation
from tadquality.enum import Preset
from tadquality.exceptions import EmptyGroundTruthException
from tadquality.exceptions import InvalidParameterException
from tadquality.inference import Detection
from tadquality.logging import logger
from tadquality.quality_maps import GroundTruthAction
from tadquality.quality_maps import tiou


@dataclasses.dataclass(frozen=True)
class EvalProtocol:
    thresholds: tuple[float, ...] = settings.DEFAULT_TIOU_THRESHOLDS
    # None evaluates every class that has ground truth
    classes: tuple[str, ...] | None = None
    interpolation: APInterpolation = APInterpolation.ALL_POINT

    def __post_init__(self):
        if not self.thresholds:
            raise InvalidParameterException("at least one tIoU threshold is required")
        if any(not 0 < t < 1 for t in self.thresholds):
            raise InvalidParameterException(
                f"tIoU thresholds must lie in (0, 1), got {self.thresholds}"
            )
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise InvalidParameterException(
                f"tIoU thresholds must be strictly increasing, got {self.thresholds}"
            )

    @classmethod
    def preset(cls, preset: Preset) -> EvalProtocol:
        return {
            Preset.THUMOS: cls(thresholds=settings.DEFAULT_TIOU_THRESHOLDS),
            Preset.ACTIVITYNET: cls(thresholds=settings.ACTIVITYNET_TIOU_THRESHOLDS),
        }[Preset(preset)]


@dataclasses.dataclass(frozen=True)
class Match:
    detection: Detection
    true_positive: bool


@dataclasses.dataclass(frozen=True)
class PRCurve:
    scores: np.ndarray
    precision: np.ndarray
    recall: np.ndarray


def ranking_key(detection: Detection):
    return -detection.score, detection.interval.start, detection.video_id


def match_detections(
    dets: Sequence[Detection], gts: Sequence[GroundTruthAction], threshold: float
) -> list[Match]:
    """Greedy one-to-one matching in descending score order

    A detection can only claim a ground truth of its own video and class.
    """
    available: dict[tuple[str, str], list[GroundTruthAction]] = {}
    for gt in gts:
        available.setdefault((gt.video_id, gt.label), []).append(gt)
    matched: set[tuple[str, str, int]] = set()

    matches = []
    for detection in sorted(dets, key=ranking_key):
        best, best_overlap = None, threshold
        for index, gt in enumerate(available.get((detection.video_id, detection.label), ())):
            key = (detection.video_id, detection.label, index)
            if key in matched:
                continue
            overlap = tiou(detection.interval, gt.interval)
            if overlap >= best_overlap and (best is None or overlap > best_overlap):
                best, best_overlap = key, overlap
        if best is not None:
            matched.add(best)
        matches.append(Match(detection=detection, true_positive=best is not None))
    return matches


def pr_curve(matches: Sequence[Match], num_gt: int) -> PRCurve:
    tp = np.cumsum([m.true_positive for m in matches], dtype=float)
    fp = np.cumsum([not m.true_positive for m in matches], dtype=float)
    ranks = tp + fp
    precision = np.divide(tp, ranks, out=np.zeros_like(tp), where=ranks > 0)
    recall = tp / num_gt if num_gt > 0 else np.zeros_like(tp)
    return PRCurve(
        scores=np.array([m.detection.score for m in matches], dtype=float),
        precision=precision,
        recall=recall,
    )


def _all_point(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    changes = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[changes + 1] - mrec[changes]) * mpre[changes + 1]))


def _eleven_point(recall: np.ndarray, precision: np.ndarray) -> float:
    ap = 0.0
    for t in np.linspace(0.0, 1.0, 11):
        reached = recall >= t - 1e-12
        ap += float(precision[reached].max()) if reached.any() else 0.0
    return ap / 11


def average_precision(
    true_positives: Sequence[bool],
    num_gt: int,
    interpolation: APInterpolation = APInterpolation.ALL_POINT,
) -> float:
    """Area under the precision/recall curve of a ranked TP/FP sequence"""
    if num_gt < 0:
        raise InvalidParameterException(f"num_gt must be non-negative, got {num_gt}")
    if num_gt == 0 or len(true_positives) == 0:
        return 0.0
    tp = np.cumsum(np.asarray(true_positives, dtype=float))
    precision = tp / np.arange(1, tp.size + 1)
    recall = tp / num_gt
    if APInterpolation(interpolation) == APInterpolation.ELEVEN_POINT:
        return _eleven_point(recall, precision)
    return _all_point(recall, precision)


@dataclasses.dataclass(frozen=True)
class MapTable:
    classes: tuple[str, ...]
    thresholds: tuple[float, ...]
    ap: np.ndarray

    @property
    def mean_ap(self) -> np.ndarray:
        return self.ap.mean(axis=0)

    @property
    def average_map(self) -> float:
        return float(self.mean_ap.mean())

    @staticmethod
    def column(threshold: float) -> str:
        return f"tiou_{threshold:.2f}"

    def summary(self) -> dict[str, float]:
        row = {self.column(t): float(v) for t, v in zip(self.thresholds, self.mean_ap)}
        row["average"] = self.average_map
        return row

    def to_frame(self) -> pd.DataFrame:
        """Per-class AP rows followed by a `mAP` row"""
        columns = [self.column(t) for t in self.thresholds]
        frame = pd.DataFrame(self.ap, columns=columns)
        frame.insert(0, "class", list(self.classes))
        frame["average"] = self.ap.mean(axis=1)
        summary = {"class": "mAP", **self.summary()}
        return pd.concat([frame, pd.DataFrame([summary])], ignore_index=True)


def map_table(
    dets: Sequence[Detection],
    gts: Sequence[GroundTruthAction],
    protocol: EvalProtocol = EvalProtocol(),
) -> MapTable:
    if not gts:
        raise EmptyGroundTruthException()
    counts: dict[str, int] = {}
    for gt in gts:
        counts[gt.label] = counts.get(gt.label, 0) + 1
    candidates = protocol.classes if protocol.classes is not None else sorted(counts)
    classes = tuple(c for c in candidates if counts.get(c, 0) > 0)
    if not classes:
        raise EmptyGroundTruthException()
    skipped = set(candidates) - set(classes)
    if skipped:
        logger.debug("Excluding classes without ground truth: %s", sorted(skipped))

    ap = np.zeros((len(classes), len(protocol.thresholds)))
    for row, label in enumerate(classes):
        class_dets = [d for d in dets if d.label == label]
        class_gts = [g for g in gts if g.label == label]
        for col, threshold in enumerate(protocol.thresholds):
            matches = match_detections(class_dets, class_gts, threshold)
            ap[row, col] = average_precision(
                [m.true_positive for m in matches], len(class_gts), protocol.interpolation
            )
    logger.debug("Evaluated %d classes at %d thresholds", len(classes), len(protocol.thresholds))
    return MapTable(classes=classes, thresholds=tuple(protocol.thresholds), ap=ap)


def best_overlap(detection: Detection, gts: Sequence[GroundTruthAction]) -> float:
    overlaps = [
        tiou(detection.interval, gt.interval)
        for gt in gts
        if gt.label == detection.label and gt.video_id == detection.video_id
    ]
    return max(overlaps, default=0.0)


def oracle_rescore(
    dets: Sequence[Detection], gts: Sequence[GroundTruthAction]
) -> list[Detection]:
    """Replace each score by the best tIoU against a same-class ground truth"""
    return [dataclasses.replace(d, score=best_overlap(d, gts)) for d in dets]


def score_tiou_correlation(
    dets: Sequence[Detection], gts: Sequence[GroundTruthAction]
) -> float:
    """Spearman rank correlation between detection scores and their true tIoU"""
    scores = np.array([d.score for d in dets], dtype=float)
    overlaps = np.array([best_overlap(d, gts) for d in dets], dtype=float)
    if scores.size < 2 or np.ptp(scores) == 0 or np.ptp(overlaps) == 0:
        logger.debug("Rank correlation undefined for %d detections", scores.size)
        return 0.0
    return float(stats.spearmanr(scores, overlaps).correlation)
