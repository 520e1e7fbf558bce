"""Exception hierarchy shared by the library and the CLI."""

from typing import Optional


class CloudClassError(Exception):
    """Base class for every error raised by cloudclass."""


class DimensionMismatchError(CloudClassError, ValueError):
    def __init__(self, expected: int, got: int):
        super().__init__(f"Expected a vector of length {expected}, received {got}")
        self.expected = expected
        self.got = got


class DegenerateFeatureError(CloudClassError, ValueError):
    """A feature has zero variance or a zero normalization range."""

    def __init__(self, feature: int, reason: str):
        super().__init__(f"Feature {feature} is degenerate: {reason}")
        self.feature = feature


class UntrainedModelError(CloudClassError):
    pass


class UnknownClassError(CloudClassError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "Unknown class"


class DuplicateLabelError(CloudClassError, ValueError):
    pass


class DatasetError(CloudClassError, ValueError):
    def __init__(
        self, message: str, line: Optional[int] = None, column: Optional[str] = None
    ):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if column is not None:
            where.append(f"column '{column}'")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"{message}{suffix}")
        self.line = line
        self.column = column


class ModelFileError(CloudClassError):
    pass


class ModelVersionError(ModelFileError):
    pass


class ModelChecksumError(ModelFileError):
    pass


class ScheduleError(CloudClassError, ValueError):
    """A stream schedule does not fit its dataset."""
