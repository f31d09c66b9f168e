"""Seeded synthetic ground truth, detector outputs and feature streams

All lengths are frame-level timesteps; the annotation schema stores seconds
(timesteps / fps). Video `i` of a corpus draws from its own Philox streams
keyed by `(seed, i, stream)`, so videos are independent of each other and of
the corpus size.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from scipy.ndimage import gaussian_filter1d

from tadquality import rng as streams
from tadquality import settings
from tadquality.anchor_sampling import FeatureSequence
from tadquality.enum import JitterMode
from tadquality.exceptions import InfeasiblePackingException
from tadquality.exceptions import InvalidParameterException
from tadquality.formats.models import AnnotationSchema
from tadquality.formats.models import SegmentSchema
from tadquality.formats.models import VideoSchema
from tadquality.inference import CoarsePrediction
from tadquality.inference import Detection
from tadquality.inference import Prediction
from tadquality.inference import PyramidConfig
from tadquality.inference import RefinedPrediction
from tadquality.inference import assign_level
from tadquality.inference import refine
from tadquality.logging import logger
from tadquality.quality_maps import GroundTruthAction
from tadquality.quality_maps import Interval
from tadquality.quality_maps import tiou


def _check_range(name: str, value: tuple[float, float], minimum: float = 0.0):
    low, high = value
    if not minimum <= low <= high:
        raise InvalidParameterException(f"invalid {name} range {value}")


@dataclasses.dataclass(frozen=True)
class CorpusConfig:
    videos: int = 20
    classes: int = 4
    video_length: tuple[float, float] = (200.0, 400.0)
    actions_per_video: tuple[int, int] = (1, 5)
    # Action durations are log-uniform within these bounds
    action_duration: tuple[float, float] = (2.0, 100.0)
    fps: float = settings.DEFAULT_FPS
    seed: int = settings.DEFAULT_SEED

    def __post_init__(self):
        if self.videos < 0:
            raise InvalidParameterException(f"video count must be non-negative, got {self.videos}")
        if self.classes < 1:
            raise InvalidParameterException(f"class count must be positive, got {self.classes}")
        if self.fps <= 0:
            raise InvalidParameterException(f"fps must be positive, got {self.fps}")
        _check_range("video length", self.video_length, minimum=1.0)
        _check_range("actions per video", self.actions_per_video)
        _check_range("action duration", self.action_duration)
        if self.action_duration[0] <= 0:
            raise InvalidParameterException("action durations must be positive")
        if self.action_duration[1] > self.video_length[0]:
            raise InvalidParameterException(
                f"actions up to {self.action_duration[1]} timesteps do not fit "
                f"videos of {self.video_length[0]}"
            )

    @property
    def class_names(self) -> list[str]:
        return [f"class_{c:02d}" for c in range(self.classes)]

    @staticmethod
    def video_id(index: int) -> str:
        return f"video_{index:04d}"


@dataclasses.dataclass(frozen=True)
class NoiseConfig:
    boundary_jitter: float = 0.0
    jitter_mode: JitterMode = JitterMode.ABSOLUTE
    score_noise: float = 0.0
    false_positive_rate: float = 0.0
    miss_rate: float = 0.0

    def __post_init__(self):
        for name in ("boundary_jitter", "score_noise", "false_positive_rate", "miss_rate"):
            if getattr(self, name) < 0:
                raise InvalidParameterException(f"{name} must be non-negative")
        if self.miss_rate > 1:
            raise InvalidParameterException(f"miss rate must be at most 1, got {self.miss_rate}")

    def jitter_scale(self, length: float) -> float:
        if JitterMode(self.jitter_mode) == JitterMode.PROPORTIONAL:
            return self.boundary_jitter * length
        return self.boundary_jitter


def _place_actions(
    rng: np.random.Generator, cfg: CorpusConfig, video_id: str, length: float
) -> list[tuple[float, float, str]]:
    low, high = cfg.actions_per_video
    count = int(rng.integers(low, high + 1))
    placed: list[tuple[float, float, str]] = []
    for _ in range(count):
        label = cfg.class_names[int(rng.integers(cfg.classes))]
        for attempt in range(settings.MAX_PACKING_RETRIES):
            duration = float(streams.log_uniform(rng, *cfg.action_duration))
            start = float(rng.uniform(0.0, length - duration))
            end = start + duration
            if all(
                other != label or end <= s or e <= start for s, e, other in placed
            ):
                placed.append((start, end, label))
                break
            logger.debug("Retrying placement in %s (attempt %d)", video_id, attempt + 1)
        else:
            raise InfeasiblePackingException(video_id, settings.MAX_PACKING_RETRIES)
    return sorted(placed)


def generate_ground_truth(cfg: CorpusConfig) -> AnnotationSchema:
    videos = {}
    for index in range(cfg.videos):
        video_id = cfg.video_id(index)
        rng = streams.seeded_generator(cfg.seed, index, streams.GROUND_TRUTH)
        length = float(rng.uniform(*cfg.video_length))
        actions = _place_actions(rng, cfg, video_id, length)
        videos[video_id] = VideoSchema(
            duration=length / cfg.fps,
            fps=cfg.fps,
            annotations=[
                SegmentSchema(segment=(start / cfg.fps, end / cfg.fps), label=label)
                for start, end, label in actions
            ],
        )
    logger.debug("Generated %d videos with seed %d", len(videos), cfg.seed)
    return AnnotationSchema(videos=videos)


def _video_length(video: VideoSchema) -> float:
    return video.duration * video.fps


def _jittered(
    rng: np.random.Generator, interval: Interval, scale: float, length: float
) -> Interval:
    start, end = sorted(
        (
            float(interval.start + scale * streams.standard_normal(rng)),
            float(interval.end + scale * streams.standard_normal(rng)),
        )
    )
    low = min(0.0, interval.start)
    high = max(length, interval.end)
    return Interval(min(max(start, low), high), min(max(end, low), high))


def _random_interval(
    rng: np.random.Generator, reference: float, length: float
) -> Interval:
    duration = min(reference * float(np.exp(rng.uniform(-1.0, 1.0))), length)
    start = float(rng.uniform(0.0, length - duration))
    return Interval(start, start + duration)


def generate_noisy_detections(
    corpus: AnnotationSchema,
    noise: NoiseConfig,
    seed: int = settings.DEFAULT_SEED,
) -> list[Detection]:
    """One jittered detection per ground truth plus random false positives

    Each kept detection scores clip(tIoU + score_noise * z, 0, 1) against its
    ground truth; false positives score uniformly in [0, 1).
    """
    classes = corpus.classes
    detections = []
    for index, video_id in enumerate(corpus.videos):
        rng = streams.seeded_generator(seed, index, streams.DETECTIONS)
        length = _video_length(corpus.videos[video_id])
        for gt in corpus.actions(video_id):
            missed = rng.uniform() < noise.miss_rate
            interval = _jittered(rng, gt.interval, noise.jitter_scale(gt.interval.length), length)
            score = tiou(interval, gt.interval) + noise.score_noise * float(
                streams.standard_normal(rng)
            )
            if not missed:
                detections.append(
                    Detection(
                        interval=interval,
                        label=gt.label,
                        score=min(max(score, 0.0), 1.0),
                        video_id=video_id,
                    )
                )
            if rng.uniform() < noise.false_positive_rate:
                detections.append(
                    Detection(
                        interval=_random_interval(rng, gt.interval.length, length),
                        label=classes[int(rng.integers(len(classes)))],
                        score=float(rng.uniform()),
                        video_id=video_id,
                    )
                )
    logger.debug("Generated %d detections", len(detections))
    return detections


def generate_feature_stream(
    video: VideoSchema,
    channels: int,
    seed: int = settings.DEFAULT_SEED,
    index: int = 0,
    bump_width: float = 1.0,
    bump_height: float = 2.0,
    smoothing: float = 2.0,
) -> FeatureSequence:
    """Smoothed noise with a Gaussian bump at every action boundary"""
    if channels < 1:
        raise InvalidParameterException(f"channel count must be positive, got {channels}")
    rng = streams.seeded_generator(seed, index, streams.FEATURES)
    length = video.frame_count
    noise = streams.standard_normal(rng, (length, channels))
    data = 0.5 * gaussian_filter1d(noise, sigma=smoothing, axis=0, mode="nearest")
    # Start bumps load positively on every channel, end bumps alternate in sign
    signs = np.where(np.arange(channels) % 2 == 0, 1.0, -1.0)
    t = np.arange(length, dtype=float)[:, None]
    for item in video.annotations:
        start, end = (x * video.fps for x in item.segment)
        data += bump_height * np.exp(-0.5 * ((t - start) / bump_width) ** 2)
        data += bump_height * signs * np.exp(-0.5 * ((t - end) / bump_width) ** 2)
    return FeatureSequence(data=data)


def _clip_unit(x: float) -> float:
    return min(max(float(x), 0.0), 1.0)


def _class_scores(
    rng: np.random.Generator, classes: int, label_index: int, confidence: float
) -> np.ndarray:
    scores = rng.uniform(0.0, 0.1, classes)
    scores[label_index] = _clip_unit(confidence)
    return scores


def _prediction_for(
    rng: np.random.Generator,
    gt: GroundTruthAction,
    location: float,
    level: int,
    stride: float,
    label_index: int,
    classes: int,
    noise: NoiseConfig,
) -> Prediction:
    jitter = noise.jitter_scale(gt.interval.length) / stride
    true_start = location - gt.interval.start / stride
    true_end = gt.interval.end / stride - location
    offset_start = max(0.0, true_start + jitter * float(streams.standard_normal(rng)))
    offset_end = max(0.0, true_end + jitter * float(streams.standard_normal(rng)))
    coarse_interval = Interval(location - offset_start, location + offset_end).scaled(stride)
    coarse_quality = tiou(coarse_interval, gt.interval)

    width = offset_start + offset_end
    if width > 0:
        # The refinement head recovers about half of the coarse error
        delta_start = (true_start - offset_start) / width
        delta_end = (true_end - offset_end) / width
    else:
        delta_start = delta_end = 0.0
    refined_interval = refine(location, offset_start, offset_end, delta_start, delta_end)
    refined_quality = tiou(refined_interval.scaled(stride), gt.interval)

    def noisy(x: float) -> float:
        return _clip_unit(x + noise.score_noise * float(streams.standard_normal(rng)))

    return Prediction(
        coarse=CoarsePrediction(
            level=level,
            location=location,
            offset_start=offset_start,
            offset_end=offset_end,
            class_scores=_class_scores(rng, classes, label_index, noisy(0.5 + 0.5 * coarse_quality)),
            quality=noisy(coarse_quality),
        ),
        refined=RefinedPrediction(
            delta_start=delta_start,
            delta_end=delta_end,
            class_scores=_class_scores(rng, classes, label_index, noisy(0.5 + 0.5 * refined_quality)),
            quality=noisy(refined_quality),
        ),
    )


def _false_prediction(
    rng: np.random.Generator, length: float, pyramid: PyramidConfig, classes: int
) -> Prediction:
    level = int(rng.integers(pyramid.levels))
    stride = pyramid.stride(level)
    location = float(np.floor(rng.uniform(0.0, length / stride)))
    low, high = pyramid.regression_ranges[level]
    duration = rng.uniform(max(low, 1.0), min(high, length)) / stride
    split = rng.uniform()
    return Prediction(
        coarse=CoarsePrediction(
            level=level,
            location=location,
            offset_start=split * duration,
            offset_end=(1 - split) * duration,
            class_scores=rng.uniform(0.0, 0.3, classes),
            quality=float(rng.uniform(0.0, 0.3)),
        ),
        refined=RefinedPrediction(
            delta_start=0.0,
            delta_end=0.0,
            class_scores=rng.uniform(0.0, 0.3, classes),
            quality=float(rng.uniform(0.0, 0.3)),
        ),
    )


def generate_predictions(
    corpus: AnnotationSchema,
    class_names: list[str],
    noise: NoiseConfig,
    pyramid: PyramidConfig = PyramidConfig(),
    seed: int = settings.DEFAULT_SEED,
    neighbours: int = 2,
) -> dict[str, list[Prediction]]:
    """Coarse and refined head outputs around every ground truth

    Each kept action yields predictions at its centre location and
    `neighbours` grid steps either side on the level its duration maps to.
    """
    label_index = {name: i for i, name in enumerate(class_names)}
    predictions: dict[str, list[Prediction]] = {}
    for index, video_id in enumerate(corpus.videos):
        rng = streams.seeded_generator(seed, index, streams.PREDICTIONS)
        length = _video_length(corpus.videos[video_id])
        video_predictions = []
        for gt in corpus.actions(video_id):
            missed = rng.uniform() < noise.miss_rate
            level = assign_level(gt.interval.length, pyramid)
            stride = pyramid.stride(level)
            centre = float(np.round(gt.interval.center / stride))
            if not missed:
                for step in range(-neighbours, neighbours + 1):
                    location = centre + step
                    if location < 0:
                        continue
                    video_predictions.append(
                        _prediction_for(
                            rng,
                            gt,
                            location,
                            level,
                            stride,
                            label_index[gt.label],
                            len(class_names),
                            noise,
                        )
                    )
            if rng.uniform() < noise.false_positive_rate:
                video_predictions.append(
                    _false_prediction(rng, length, pyramid, len(class_names))
                )
        predictions[video_id] = video_predictions
    return predictions

