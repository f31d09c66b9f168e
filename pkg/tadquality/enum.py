from __future__ import annotations

import enum
from typing import Any


class StrEnum(str, enum.Enum):
    pass


class CaseInsensitiveStrEnum(StrEnum):
    @classmethod
    def _missing_(cls, value: Any) -> CaseInsensitiveStrEnum | None:
        for member in cls:
            if member.value.casefold() == str(value).casefold():
                return member
        return None


class Side(CaseInsensitiveStrEnum):
    START = "start"
    END = "end"


class ReductionMethod(CaseInsensitiveStrEnum):
    MAX = "max"
    MEAN = "mean"
    FC = "fc"
    MEAN_AND_MAX = "mean_and_max"


class NMSDecay(CaseInsensitiveStrEnum):
    LINEAR = "linear"
    GAUSSIAN = "gaussian"


class APInterpolation(CaseInsensitiveStrEnum):
    ALL_POINT = "all_point"
    ELEVEN_POINT = "eleven_point"


class JitterMode(CaseInsensitiveStrEnum):
    ABSOLUTE = "absolute"
    PROPORTIONAL = "proportional"


class SweepKind(CaseInsensitiveStrEnum):
    TAU = "tau"
    ANCHOR_SET = "anchor-set"
    NMS = "nms"
    REDUCTION = "reduction"


class QualitySource(CaseInsensitiveStrEnum):
    LABEL = "label"
    BEM = "bem"


class MapFormat(CaseInsensitiveStrEnum):
    CSV = "csv"
    NPY = "npy"


class Preset(CaseInsensitiveStrEnum):
    THUMOS = "thumos"
    ACTIVITYNET = "activitynet"
