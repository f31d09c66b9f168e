class BaseApplicationException(Exception):
    pass


class InvalidIntervalException(BaseApplicationException):
    def __init__(self, start: float, end: float):
        super().__init__(f"invalid interval [{start}, {end}]")


class InvalidScaleSetException(BaseApplicationException):
    pass


class InvalidParameterException(BaseApplicationException):
    pass


class DimensionMismatchException(BaseApplicationException):
    def __init__(self, what: str, expected, got):
        super().__init__(f"{what}: expected {expected}, got {got}")


class MissingProjectionParamsException(BaseApplicationException):
    def __init__(self, method):
        super().__init__(f"reduction method {method} requires projection params")


class ScoreOutOfRangeException(BaseApplicationException):
    def __init__(self, name: str, value: float):
        super().__init__(f"{name}={value} is outside [0, 1]")


class EmptyGroundTruthException(BaseApplicationException):
    def __init__(self):
        super().__init__("ground truth corpus has no actions")


class InfeasiblePackingException(BaseApplicationException):
    def __init__(self, video_id: str, retries: int):
        super().__init__(
            f"could not place non-overlapping actions in {video_id} after {retries} retries"
        )


class UnhandledFormatException(BaseApplicationException):
    def __init__(self, format_):
        super().__init__(format_)


class UnhandledSweepException(BaseApplicationException):
    def __init__(self, kind):
        super().__init__(kind)
