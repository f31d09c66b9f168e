from __future__ import annotations

import dataclasses
import pathlib

import numpy as np
import scipy.sparse
from scipy.special import expit

from tadquality import settings
from tadquality.enum import ReductionMethod
from tadquality.exceptions import DimensionMismatchException
from tadquality.exceptions import InvalidParameterException
from tadquality.exceptions import MissingProjectionParamsException
from tadquality.formats.tensors import read_tensors
from tadquality.formats.tensors import write_tensors
from tadquality.inference import RefinedPrediction
from tadquality.logging import logger
from tadquality.quality_maps import AnchorScaleSet
from tadquality.quality_maps import QualityMapPair
from tadquality.rng import normal
from tadquality.rng import seeded_generator


@dataclasses.dataclass(frozen=True)
class FeatureSequence:
    data: np.ndarray
    stride: float = 1.0

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[0] < 1 or self.data.shape[1] < 1:
            raise DimensionMismatchException("feature sequence", "T x C", self.data.shape)
        if not np.all(np.isfinite(self.data)):
            raise InvalidParameterException("feature sequence has non-finite entries")

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def channels(self) -> int:
        return self.data.shape[1]


@dataclasses.dataclass(frozen=True)
class SamplingMatrix:
    weights: scipy.sparse.csr_matrix
    length: int
    scale_set: AnchorScaleSet
    samples: int

    @property
    def grid_shape(self) -> tuple[int, int, int]:
        return self.length, self.scale_set.count, self.samples


def _interpolation_weights(positions: np.ndarray, length: int):
    """Two-tap linear interpolation weights with edge clamping"""
    clamped = np.clip(positions, 0.0, length - 1)
    lower = np.floor(clamped).astype(int)
    upper = np.minimum(lower + 1, length - 1)
    upper_weight = clamped - lower
    return lower, upper, 1.0 - upper_weight, upper_weight


def sample_point(f: FeatureSequence, t: float) -> np.ndarray:
    lower, upper, w_lower, w_upper = _interpolation_weights(np.array([t]), f.length)
    return w_lower[0] * f.data[lower[0]] + w_upper[0] * f.data[upper[0]]


def temporal_upsample(f: FeatureSequence, factor: int) -> FeatureSequence:
    if factor < 1:
        raise InvalidParameterException(f"upsampling factor must be >= 1, got {factor}")
    if factor == 1:
        return f
    positions = np.arange(f.length * factor) / factor
    lower, upper, w_lower, w_upper = _interpolation_weights(positions, f.length)
    data = w_lower[:, None] * f.data[lower] + w_upper[:, None] * f.data[upper]
    return FeatureSequence(data=data, stride=f.stride / factor)


def build_sampling_matrix(
    length: int, scale_set: AnchorScaleSet, samples: int = settings.DEFAULT_BEM_SAMPLES
) -> SamplingMatrix:
    """Sparse (T*I*N) x T matrix of the anchor sample grid

    Row ((t * I) + i) * N + k samples position t - r_i/2 + k * r_i/(N-1).
    """
    if samples < 2:
        raise InvalidParameterException(f"need at least 2 samples per anchor, got {samples}")
    if length < 1:
        raise InvalidParameterException(f"sequence length must be positive, got {length}")
    scales = scale_set.scales
    t = np.arange(length, dtype=float)[:, None, None]
    r = scales[None, :, None]
    k = np.arange(samples, dtype=float)[None, None, :]
    positions = (t - r / 2 + k * r / (samples - 1)).ravel()

    lower, upper, w_lower, w_upper = _interpolation_weights(positions, length)
    rows = np.arange(positions.size)
    weights = scipy.sparse.coo_matrix(
        (
            np.concatenate([w_lower, w_upper]),
            (np.concatenate([rows, rows]), np.concatenate([lower, upper])),
        ),
        shape=(positions.size, length),
    ).tocsr()
    weights.eliminate_zeros()
    logger.debug(
        "Built sampling matrix %s with %d non-zeros", weights.shape, weights.nnz
    )
    return SamplingMatrix(
        weights=weights, length=length, scale_set=scale_set, samples=samples
    )


def sample_anchor_features(f: FeatureSequence, w: SamplingMatrix) -> np.ndarray:
    """Anchor feature map M of shape T x I x N x C"""
    if w.length != f.length:
        raise DimensionMismatchException("sampling matrix length", f.length, w.length)
    sampled = w.weights @ f.data
    return np.asarray(sampled).reshape(*w.grid_shape, f.channels)


@dataclasses.dataclass
class ReductionParams:
    weight: np.ndarray
    bias: np.ndarray | None = None


def reduce_anchor_features(
    anchor_map: np.ndarray,
    method: ReductionMethod = ReductionMethod.MAX,
    params: ReductionParams | None = None,
) -> np.ndarray:
    method = ReductionMethod(method)
    if method == ReductionMethod.MAX:
        return anchor_map.max(axis=2)
    if method == ReductionMethod.MEAN:
        return anchor_map.mean(axis=2)

    if params is None:
        raise MissingProjectionParamsException(method.value)
    length, scales, samples, channels = anchor_map.shape
    if method == ReductionMethod.FC:
        stacked = anchor_map.reshape(length, scales, samples * channels)
    elif method == ReductionMethod.MEAN_AND_MAX:
        stacked = np.concatenate(
            [anchor_map.mean(axis=2), anchor_map.max(axis=2)], axis=-1
        )
    else:
        raise NotImplementedError
    if params.weight.shape[0] != stacked.shape[-1]:
        raise DimensionMismatchException(
            f"{method.value} projection", stacked.shape[-1], params.weight.shape[0]
        )
    reduced = stacked @ params.weight
    if params.bias is not None:
        reduced = reduced + params.bias
    return reduced


def _pooling_width(method: ReductionMethod, samples: int, channels: int) -> int | None:
    return {
        ReductionMethod.MAX: None,
        ReductionMethod.MEAN: None,
        ReductionMethod.FC: samples * channels,
        ReductionMethod.MEAN_AND_MAX: 2 * channels,
    }[method]


@dataclasses.dataclass
class BemHeadParams:
    projection_weight: np.ndarray
    projection_bias: np.ndarray
    start_weight: np.ndarray
    start_bias: np.ndarray
    end_weight: np.ndarray
    end_bias: np.ndarray
    reduction: ReductionMethod = ReductionMethod.MAX
    pooling_weight: np.ndarray | None = None

    @property
    def channels(self) -> int:
        return self.projection_weight.shape[0]

    @property
    def scales(self) -> int:
        return self.start_weight.shape[0]

    @classmethod
    def zeros(
        cls,
        channels: int,
        scales: int,
        samples: int = settings.DEFAULT_BEM_SAMPLES,
        reduction: ReductionMethod = ReductionMethod.MAX,
    ) -> BemHeadParams:
        width = _pooling_width(ReductionMethod(reduction), samples, channels)
        return cls(
            projection_weight=np.zeros((channels, channels)),
            projection_bias=np.zeros(channels),
            start_weight=np.zeros((scales, channels)),
            start_bias=np.zeros(scales),
            end_weight=np.zeros((scales, channels)),
            end_bias=np.zeros(scales),
            reduction=ReductionMethod(reduction),
            pooling_weight=None if width is None else np.zeros((width, channels)),
        )

    @classmethod
    def random(
        cls,
        channels: int,
        scales: int,
        seed: int,
        samples: int = settings.DEFAULT_BEM_SAMPLES,
        reduction: ReductionMethod = ReductionMethod.MAX,
    ) -> BemHeadParams:
        rng = seeded_generator(seed)
        scale = 1.0 / np.sqrt(channels)
        width = _pooling_width(ReductionMethod(reduction), samples, channels)
        return cls(
            projection_weight=normal(rng, 0.0, scale, (channels, channels)),
            projection_bias=np.zeros(channels),
            start_weight=normal(rng, 0.0, scale, (scales, channels)),
            start_bias=np.zeros(scales),
            end_weight=normal(rng, 0.0, scale, (scales, channels)),
            end_bias=np.zeros(scales),
            reduction=ReductionMethod(reduction),
            pooling_weight=(
                None
                if width is None
                else normal(rng, 0.0, 1.0 / np.sqrt(width), (width, channels))
            ),
        )

    def save(self, path: pathlib.Path):
        arrays = {
            field.name: getattr(self, field.name)
            for field in dataclasses.fields(self)
            if isinstance(getattr(self, field.name), np.ndarray)
        }
        write_tensors(path, arrays, metadata={"reduction": self.reduction.value})

    @classmethod
    def load(cls, path: pathlib.Path) -> BemHeadParams:
        arrays, metadata = read_tensors(path)
        return cls(reduction=ReductionMethod(metadata.get("reduction", "max")), **arrays)


def bem_forward(
    f: FeatureSequence,
    scale_set: AnchorScaleSet,
    samples: int,
    params: BemHeadParams,
    sampling_matrix: SamplingMatrix | None = None,
) -> QualityMapPair:
    """Predict start/end quality maps from a frame-level feature sequence"""
    if params.channels != f.channels:
        raise DimensionMismatchException("head channels", f.channels, params.channels)
    if params.scales != scale_set.count:
        raise DimensionMismatchException("head scales", scale_set.count, params.scales)
    if sampling_matrix is None:
        sampling_matrix = build_sampling_matrix(f.length, scale_set, samples)
    anchor_map = sample_anchor_features(f, sampling_matrix)

    reduction_params = (
        None
        if params.pooling_weight is None
        else ReductionParams(weight=params.pooling_weight)
    )
    pooled = reduce_anchor_features(anchor_map, params.reduction, reduction_params)
    region = pooled @ params.projection_weight + params.projection_bias
    start_logits = np.einsum("tic,ic->ti", region, params.start_weight) + params.start_bias
    end_logits = np.einsum("tic,ic->ti", region, params.end_weight) + params.end_bias
    return QualityMapPair(
        start_map=expit(start_logits), end_map=expit(end_logits), scale_set=scale_set
    )


@dataclasses.dataclass
class FuseParams:
    weight: np.ndarray
    bias: np.ndarray


def aligned_proposal_feature(
    f: FeatureSequence,
    t: float,
    offset_start: float,
    offset_end: float,
    fuse_params: FuseParams,
) -> np.ndarray:
    """Fuse features sampled at the coarse start, the location and the coarse end"""
    if offset_start < 0 or offset_end < 0:
        raise InvalidParameterException(
            f"offsets must be non-negative, got ({offset_start}, {offset_end})"
        )
    if fuse_params.weight.shape[0] != 3 * f.channels:
        raise DimensionMismatchException(
            "fusion weight rows", 3 * f.channels, fuse_params.weight.shape[0]
        )
    stacked = np.concatenate(
        [
            sample_point(f, t - offset_start),
            sample_point(f, t),
            sample_point(f, t + offset_end),
        ]
    )
    return stacked @ fuse_params.weight + fuse_params.bias


@dataclasses.dataclass
class RemHeadParams:
    fuse_weight: np.ndarray
    fuse_bias: np.ndarray
    offset_weight: np.ndarray
    offset_bias: np.ndarray
    class_weight: np.ndarray
    class_bias: np.ndarray
    quality_weight: np.ndarray
    quality_bias: np.ndarray

    @property
    def fuse(self) -> FuseParams:
        return FuseParams(weight=self.fuse_weight, bias=self.fuse_bias)

    @classmethod
    def random(cls, channels: int, classes: int, seed: int) -> RemHeadParams:
        rng = seeded_generator(seed)
        scale = 1.0 / np.sqrt(channels)
        return cls(
            fuse_weight=normal(rng, 0.0, 1.0 / np.sqrt(3 * channels), (3 * channels, channels)),
            fuse_bias=np.zeros(channels),
            offset_weight=normal(rng, 0.0, scale, (channels, 2)),
            offset_bias=np.zeros(2),
            class_weight=normal(rng, 0.0, scale, (channels, classes)),
            class_bias=np.zeros(classes),
            quality_weight=normal(rng, 0.0, scale, channels),
            quality_bias=np.zeros(()),
        )

    def save(self, path: pathlib.Path):
        write_tensors(path, dataclasses.asdict(self))

    @classmethod
    def load(cls, path: pathlib.Path) -> RemHeadParams:
        arrays, _ = read_tensors(path)
        return cls(**arrays)


def rem_forward(
    f: FeatureSequence,
    t: float,
    offset_start: float,
    offset_end: float,
    params: RemHeadParams,
) -> RefinedPrediction:
    """Refinement outputs for one coarse proposal at location t"""
    feature = aligned_proposal_feature(f, t, offset_start, offset_end, params.fuse)
    deltas = feature @ params.offset_weight + params.offset_bias
    return RefinedPrediction(
        delta_start=float(deltas[0]),
        delta_end=float(deltas[1]),
        class_scores=expit(feature @ params.class_weight + params.class_bias),
        quality=float(expit(feature @ params.quality_weight + params.quality_bias)),
    )
