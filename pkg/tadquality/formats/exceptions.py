import pathlib


class BaseFormatException(Exception):
    pass


class FileDoesNotExist(BaseFormatException):
    def __init__(self, path: pathlib.Path):
        super().__init__(f"File `{path}` does not exist")


class SchemaError(BaseFormatException):
    def __init__(
        self,
        path: pathlib.Path | str,
        message: str,
        line: int | None = None,
        column: int | None = None,
    ):
        self.path = path
        self.line = line
        self.column = column
        location = str(path)
        if line is not None:
            location += f":{line}"
            if column is not None:
                location += f":{column}"
        super().__init__(f"{location}: {message}")


class VideoIdMismatch(BaseFormatException):
    def __init__(self, unknown: set[str]):
        listed = ", ".join(sorted(unknown))
        super().__init__(
            f"Detections reference videos missing from the annotations: {listed}"
        )
