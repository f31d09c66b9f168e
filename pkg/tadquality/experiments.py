"""Corpus-level runs behind the `pipeline`, `oracle` and `sweep` commands"""
from __future__ import annotations

import dataclasses
import math
import re
from typing import Any
from typing import Mapping
from typing import Sequence

import pandas as pd

from tadquality import settings
from tadquality.anchor_sampling import BemHeadParams
from tadquality.anchor_sampling import FeatureSequence
from tadquality.anchor_sampling import bem_forward
from tadquality.anchor_sampling import build_sampling_matrix
from tadquality.anchor_sampling import temporal_upsample
from tadquality.enum import QualitySource
from tadquality.enum import ReductionMethod
from tadquality.enum import SweepKind
from tadquality.evaluation import EvalProtocol
from tadquality.evaluation import MapTable
from tadquality.evaluation import map_table
from tadquality.evaluation import oracle_rescore
from tadquality.evaluation import score_tiou_correlation
from tadquality.exceptions import InvalidParameterException
from tadquality.exceptions import UnhandledSweepException
from tadquality.formats.models import AnnotationSchema
from tadquality.inference import Detection
from tadquality.inference import InferenceConfig
from tadquality.inference import Prediction
from tadquality.inference import PyramidConfig
from tadquality.inference import boundary_quality_lookup
from tadquality.inference import final_score
from tadquality.inference import run_pipeline
from tadquality.inference import scale_index
from tadquality.inference import soft_nms
from tadquality.logging import logger
from tadquality.quality_maps import AnchorScaleSet
from tadquality.quality_maps import QualityMapPair
from tadquality.quality_maps import multi_scale_quality_maps
from tadquality.synthetic import generate_feature_stream

QualityMaps = Mapping[str, QualityMapPair]


def label_maps_for_corpus(
    corpus: AnnotationSchema, scale_set: AnchorScaleSet
) -> dict[str, QualityMapPair]:
    return {
        video_id: multi_scale_quality_maps(
            corpus.actions(video_id), video.frame_count, scale_set
        )
        for video_id, video in corpus.videos.items()
    }


def finest_level_features(frames: FeatureSequence, stride: int) -> FeatureSequence:
    """f_F: the stride-`stride` pyramid level upsampled back to frame rate"""
    if stride < 1:
        raise InvalidParameterException(f"pyramid stride must be >= 1, got {stride}")
    level = FeatureSequence(data=frames.data[::stride], stride=float(stride))
    upsampled = temporal_upsample(level, stride)
    return FeatureSequence(data=upsampled.data[: frames.length], stride=upsampled.stride)


def predicted_maps_for_corpus(
    corpus: AnnotationSchema,
    scale_set: AnchorScaleSet,
    samples: int = settings.DEFAULT_BEM_SAMPLES,
    method: ReductionMethod = ReductionMethod.MAX,
    seed: int = settings.DEFAULT_SEED,
    channels: int = 8,
    params: BemHeadParams | None = None,
    stride: int = settings.DEFAULT_FINEST_STRIDE,
) -> dict[str, QualityMapPair]:
    """Boundary head outputs on synthetic feature streams

    Each frame-level stream is subsampled to a pyramid level of the given
    stride and upsampled back before it reaches the head. Without `params`
    the head is randomly initialised from `seed`.
    """
    if params is None:
        params = BemHeadParams.random(channels, scale_set.count, seed, samples, method)
    channels = params.channels
    matrices = {}
    maps = {}
    for index, (video_id, video) in enumerate(corpus.videos.items()):
        features = finest_level_features(
            generate_feature_stream(video, channels, seed, index), stride
        )
        if features.length not in matrices:
            matrices[features.length] = build_sampling_matrix(
                features.length, scale_set, samples
            )
        maps[video_id] = bem_forward(
            features, scale_set, samples, params, matrices[features.length]
        )
    return maps


def boundary_probabilities(
    detection: Detection, maps: QualityMapPair, tau: float
) -> tuple[float, float]:
    index = scale_index(detection.interval.length, tau, maps.scale_set)
    p_start = boundary_quality_lookup(maps.start_map, detection.interval.start, index)
    p_end = boundary_quality_lookup(maps.end_map, detection.interval.end, index)
    return min(1.0, max(0.0, p_start)), min(1.0, max(0.0, p_end))


def rescore_with_boundary_quality(
    dets: Sequence[Detection],
    maps: QualityMaps,
    tau: float = settings.DEFAULT_TAU,
) -> list[Detection]:
    """Multiply every score by sqrt(p_s * p_e) looked up in its video's maps"""
    rescored = []
    missing = set()
    for detection in dets:
        video_maps = maps.get(detection.video_id)
        if video_maps is None:
            missing.add(detection.video_id)
            rescored.append(detection)
            continue
        p_start, p_end = boundary_probabilities(detection, video_maps, tau)
        rescored.append(
            dataclasses.replace(
                detection,
                score=final_score(detection.score, 1.0, p_start, p_end),
                p_start=p_start,
                p_end=p_end,
            )
        )
    if missing:
        logger.warning("No quality maps for %d videos, scores kept", len(missing))
    return rescored


def suppress_per_video(
    dets: Sequence[Detection], cfg: InferenceConfig
) -> list[Detection]:
    by_video: dict[str, list[Detection]] = {}
    for detection in dets:
        by_video.setdefault(detection.video_id, []).append(detection)
    kept = []
    for video_id in sorted(by_video):
        kept.extend(
            soft_nms(
                by_video[video_id],
                threshold=cfg.nms_threshold,
                score_floor=cfg.score_floor,
                decay=cfg.nms_decay,
                sigma=cfg.nms_sigma,
                per_class=cfg.per_class_nms,
            )
        )
    return kept


def detect_corpus(
    corpus: AnnotationSchema,
    predictions: Mapping[str, Sequence[Prediction]],
    maps: QualityMaps,
    cfg: InferenceConfig,
    class_names: Sequence[str],
    pyramid: PyramidConfig = PyramidConfig(),
) -> list[Detection]:
    detections = []
    for video_id in corpus.videos:
        detections.extend(
            run_pipeline(
                predictions.get(video_id, ()),
                maps.get(video_id),
                cfg,
                class_names,
                pyramid,
                video_id,
            )
        )
    return detections


def oracle_experiment(
    corpus: AnnotationSchema,
    dets: Sequence[Detection],
    protocol: EvalProtocol = EvalProtocol(),
) -> tuple[MapTable, MapTable]:
    """mAP of the raw scores and of scores replaced by the true tIoU"""
    gts = corpus.all_actions()
    return map_table(dets, gts, protocol), map_table(oracle_rescore(dets, gts), gts, protocol)


@dataclasses.dataclass(frozen=True)
class SweepSettings:
    inference: InferenceConfig = InferenceConfig()
    protocol: EvalProtocol = EvalProtocol()
    quality_source: QualitySource = QualitySource.LABEL
    samples: int = settings.DEFAULT_BEM_SAMPLES
    reduction: ReductionMethod = ReductionMethod.MAX
    channels: int = 8
    seed: int = settings.DEFAULT_SEED


def parse_grid(kind: SweepKind, text: str) -> list[Any]:
    """Anchor sets are separated by `;`, scalar grids by `;` or `,`"""
    kind = SweepKind(kind)
    separator = ";" if kind == SweepKind.ANCHOR_SET else "[;,]"
    items = [item.strip() for item in re.split(separator, text) if item.strip()]
    if not items:
        raise InvalidParameterException(f"empty {kind.value} grid")
    try:
        if kind == SweepKind.ANCHOR_SET:
            return [AnchorScaleSet.parse(item) for item in items]
        if kind == SweepKind.REDUCTION:
            return [ReductionMethod(item) for item in items]
        values = [float(item) for item in items]
    except ValueError as e:
        raise InvalidParameterException(f"invalid {kind.value} grid {text!r}: {e}")
    if any(not math.isfinite(v) for v in values):
        raise InvalidParameterException(f"invalid {kind.value} grid {text!r}")
    return values


def _apply(kind: SweepKind, value: Any, base: SweepSettings) -> SweepSettings:
    if kind == SweepKind.TAU:
        return dataclasses.replace(
            base, inference=dataclasses.replace(base.inference, tau=value)
        )
    if kind == SweepKind.ANCHOR_SET:
        return dataclasses.replace(
            base, inference=dataclasses.replace(base.inference, scale_set=value)
        )
    if kind == SweepKind.NMS:
        return dataclasses.replace(
            base, inference=dataclasses.replace(base.inference, nms_threshold=value)
        )
    if kind == SweepKind.REDUCTION:
        # Label maps ignore the reduction, so this sweep always uses the head
        return dataclasses.replace(
            base, reduction=value, quality_source=QualitySource.BEM
        )
    raise UnhandledSweepException(kind)


def evaluate_setting(
    corpus: AnnotationSchema, dets: Sequence[Detection], setting: SweepSettings
) -> MapTable:
    cfg = setting.inference
    scored = list(dets)
    if cfg.use_boundary_quality:
        if QualitySource(setting.quality_source) == QualitySource.BEM:
            maps = predicted_maps_for_corpus(
                corpus,
                cfg.scale_set,
                setting.samples,
                setting.reduction,
                setting.seed,
                setting.channels,
            )
        else:
            maps = label_maps_for_corpus(corpus, cfg.scale_set)
        scored = rescore_with_boundary_quality(scored, maps, cfg.tau)
    return map_table(
        suppress_per_video(scored, cfg), corpus.all_actions(), setting.protocol
    )


def run_sweep(
    kind: SweepKind,
    grid: Sequence[Any],
    corpus: AnnotationSchema,
    dets: Sequence[Detection],
    base: SweepSettings = SweepSettings(),
) -> pd.DataFrame:
    """One row per grid point: the parameter, mAP per threshold and the average"""
    kind = SweepKind(kind)
    rows = []
    for value in grid:
        setting = _apply(kind, value, base)
        table = evaluate_setting(corpus, dets, setting)
        logger.debug("Sweep %s=%s: average mAP %.4f", kind.value, value, table.average_map)
        label = value.value if isinstance(value, ReductionMethod) else str(value)
        rows.append({"parameter": label, **table.summary()})
    return pd.DataFrame(rows)


def boundary_quality_correlation(
    corpus: AnnotationSchema,
    dets: Sequence[Detection],
    scale_set: AnchorScaleSet,
    tau: float = settings.DEFAULT_TAU,
    keep_scores: bool = False,
) -> float:
    """Rank correlation of boundary-quality scores from label maps with the true tIoU

    By default every score is reset to 1 so only sqrt(p_s * p_e) is ranked;
    with `keep_scores` the detection scores are fused with it instead.
    """
    maps = label_maps_for_corpus(corpus, scale_set)
    if not keep_scores:
        dets = [dataclasses.replace(d, score=1.0) for d in dets]
    return score_tiou_correlation(
        rescore_with_boundary_quality(dets, maps, tau), corpus.all_actions()
    )
