from __future__ import annotations

import pathlib
from typing import Mapping

import numpy as np

from .json_file import JSONFile
from .models import TensorContainer
from .models import TensorSchema


class TensorFile(JSONFile[TensorContainer]):
    schema = TensorContainer


def write_tensors(
    path: pathlib.Path,
    arrays: Mapping[str, np.ndarray | None],
    metadata: Mapping[str, str] | None = None,
):
    TensorFile(path).write(
        TensorContainer(
            arrays={
                name: TensorSchema(
                    shape=list(array.shape), data=np.ravel(array).astype(float).tolist()
                )
                for name, array in arrays.items()
                if array is not None
            },
            metadata=dict(metadata or {}),
        )
    )


def read_tensors(path: pathlib.Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    container = TensorFile(path).read()
    arrays = {
        name: np.array(tensor.data, dtype=float).reshape(tensor.shape)
        for name, tensor in container.arrays.items()
    }
    return arrays, container.metadata
