from __future__ import annotations

import math
import typing

from pydantic import confloat
from pydantic import validator

from tadquality.base_model import BaseModel
from tadquality.inference import Detection
from tadquality.quality_maps import GroundTruthAction
from tadquality.quality_maps import Interval

from .exceptions import VideoIdMismatch

"""
# Example annotation file

```json
{
  "videos": {
    "video_0001": {
      "duration": 31.5,
      "fps": 10.0,
      "annotations": [
        {"segment": [2.4, 7.9], "label": "class_03"}
      ]
    }
  }
}
```

# Example detection file

```json
{
  "results": {
    "video_0001": [
      {"segment": [2.6, 7.5], "label": "class_03", "score": 0.82}
    ]
  }
}
```

Segments are stored in seconds; in memory they are frame-level timesteps
(seconds * fps).
"""


def _valid_segment(v: tuple[float, float]) -> tuple[float, float]:
    start, end = v
    if not (math.isfinite(start) and math.isfinite(end)):
        raise ValueError("segment bounds must be finite")
    if start > end:
        raise ValueError(f"segment start {start} is after its end {end}")
    return v


class SegmentSchema(BaseModel):
    segment: tuple[float, float]
    label: str

    _segment = validator("segment", allow_reuse=True)(_valid_segment)


class VideoSchema(BaseModel):
    duration: confloat(gt=0)
    fps: confloat(gt=0)
    annotations: list[SegmentSchema] = []

    @property
    def frame_count(self) -> int:
        return max(1, math.ceil(self.duration * self.fps))


class AnnotationSchema(BaseModel):
    videos: dict[str, VideoSchema]

    @property
    def classes(self) -> list[str]:
        return sorted(
            {item.label for video in self.videos.values() for item in video.annotations}
        )

    def actions(self, video_id: str) -> list[GroundTruthAction]:
        video = self.videos[video_id]
        return [
            GroundTruthAction(
                interval=Interval(*item.segment).scaled(video.fps),
                label=item.label,
                video_id=video_id,
            )
            for item in video.annotations
        ]

    def all_actions(self) -> list[GroundTruthAction]:
        return [
            action for video_id in self.videos for action in self.actions(video_id)
        ]


class DetectionEntry(BaseModel):
    segment: tuple[float, float]
    label: str
    score: confloat(ge=0, le=1)

    _segment = validator("segment", allow_reuse=True)(_valid_segment)


class DetectionSchema(BaseModel):
    results: dict[str, list[DetectionEntry]]

    @classmethod
    def from_detections(
        cls, detections: typing.Iterable[Detection], annotations: AnnotationSchema
    ) -> DetectionSchema:
        results: dict[str, list[DetectionEntry]] = {
            video_id: [] for video_id in annotations.videos
        }
        for detection in detections:
            fps = annotations.videos[detection.video_id].fps
            results.setdefault(detection.video_id, []).append(
                DetectionEntry(
                    segment=(detection.interval.start / fps, detection.interval.end / fps),
                    label=detection.label,
                    score=detection.score,
                )
            )
        return cls(results=results)

    def detections(self, annotations: AnnotationSchema) -> list[Detection]:
        unknown = set(self.results) - set(annotations.videos)
        if unknown:
            raise VideoIdMismatch(unknown)
        detections = []
        for video_id, entries in self.results.items():
            fps = annotations.videos[video_id].fps
            for entry in entries:
                detections.append(
                    Detection(
                        interval=Interval(*entry.segment).scaled(fps),
                        label=entry.label,
                        score=entry.score,
                        video_id=video_id,
                    )
                )
        return detections


class RunManifest(BaseModel):
    subcommand: str
    config: dict[str, typing.Any]
    seed: int
    inputs: dict[str, str]
    outputs: dict[str, str]
    version: str


class TensorSchema(BaseModel):
    shape: list[int]
    data: list[float]

    @validator("data")
    def data_matches_shape(cls, v, values):
        shape = values.get("shape")
        if shape is not None and len(v) != math.prod(shape):
            raise ValueError(f"{len(v)} values do not fill shape {shape}")
        return v


class TensorContainer(BaseModel):
    arrays: dict[str, TensorSchema]
    metadata: dict[str, str] = {}
