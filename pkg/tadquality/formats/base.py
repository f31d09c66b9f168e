import abc
import pathlib
from typing import Generic
from typing import TypeVar

from tadquality.base_model import BaseModel

SchemaT = TypeVar("SchemaT", bound=BaseModel)


class BaseJSONFile(abc.ABC, Generic[SchemaT]):
    def __init__(self, path: pathlib.Path):
        self.path = path

    @abc.abstractmethod
    def read(self) -> SchemaT:
        pass

    @abc.abstractmethod
    def write(self, data: SchemaT):
        pass
