from __future__ import annotations

import json
import pathlib
from typing import Type

import pydantic

from .base import BaseJSONFile
from .base import SchemaT
from .exceptions import FileDoesNotExist
from .exceptions import SchemaError
from .models import AnnotationSchema
from .models import DetectionSchema
from .models import RunManifest


def _error_position(text: str, loc: tuple) -> tuple[int | None, int | None]:
    # Best effort: point at the first line mentioning the deepest string key
    keys = [part for part in loc if isinstance(part, str)]
    for key in reversed(keys):
        needle = json.dumps(key)
        for number, line in enumerate(text.splitlines(), start=1):
            column = line.find(needle)
            if column >= 0:
                return number, column + 1
    return None, None


def validation_error_to_str(error: pydantic.ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(part) for part in item["loc"])
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


class JSONFile(BaseJSONFile[SchemaT]):
    schema: Type[SchemaT]

    def read(self) -> SchemaT:
        if not self.path.exists():
            raise FileDoesNotExist(self.path)
        text = self.path.read_text(encoding="utf-8")
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise SchemaError(self.path, e.msg, e.lineno, e.colno) from e
        try:
            return self.schema.parse_obj(data)
        except pydantic.ValidationError as e:
            line, column = _error_position(text, e.errors()[0]["loc"])
            raise SchemaError(self.path, validation_error_to_str(e), line, column) from e

    def write(self, data: SchemaT):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", encoding="utf-8", newline="\n") as f:
            f.write(data.json(indent=2, sort_keys=True))
            f.write("\n")


class AnnotationFile(JSONFile[AnnotationSchema]):
    schema = AnnotationSchema


class DetectionFile(JSONFile[DetectionSchema]):
    schema = DetectionSchema


class ManifestFile(JSONFile[RunManifest]):
    schema = RunManifest

    @classmethod
    def beside(cls, output: pathlib.Path, suffix: str) -> ManifestFile:
        return cls(output.with_name(output.name + suffix))
