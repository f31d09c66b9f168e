from .base import BaseJSONFile
from .exceptions import BaseFormatException
from .exceptions import FileDoesNotExist
from .exceptions import SchemaError
from .exceptions import VideoIdMismatch
from .json_file import AnnotationFile
from .json_file import DetectionFile
from .json_file import ManifestFile
from .models import AnnotationSchema
from .models import DetectionSchema
from .models import RunManifest


__all__ = [
    "AnnotationFile",
    "AnnotationSchema",
    "BaseFormatException",
    "BaseJSONFile",
    "DetectionFile",
    "DetectionSchema",
    "FileDoesNotExist",
    "ManifestFile",
    "RunManifest",
    "SchemaError",
    "VideoIdMismatch",
]
