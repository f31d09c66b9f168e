from __future__ import annotations

import pathlib

import numpy as np
import pandas as pd

from tadquality.enum import MapFormat
from tadquality.exceptions import UnhandledFormatException
from tadquality.quality_maps import QualityMapPair


def write_table(path: pathlib.Path, table: pd.DataFrame):
    path.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(path, index=False, lineterminator="\n", float_format="%.6f")


def write_quality_maps(
    directory: pathlib.Path, video_id: str, maps: QualityMapPair, format_: MapFormat
) -> list[pathlib.Path]:
    """Dump a map pair as t rows by i columns"""
    directory.mkdir(parents=True, exist_ok=True)
    format_ = MapFormat(format_)
    if format_ == MapFormat.CSV:
        paths = []
        for side, matrix in (("start", maps.start_map), ("end", maps.end_map)):
            path = directory / f"{video_id}.{side}.csv"
            columns = [f"r={scale:g}" for scale in maps.scale_set.scales]
            write_table(path, pd.DataFrame(matrix, columns=columns))
            paths.append(path)
        return paths
    if format_ == MapFormat.NPY:
        path = directory / f"{video_id}.npy"
        np.save(path, np.stack([maps.start_map, maps.end_map]))
        return [path]
    raise UnhandledFormatException(format_)
