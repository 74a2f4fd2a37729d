"""Exception types shared across the toolkit.

Errors are grouped by the CLI exit code they map to: data problems (3),
backend problems (4) and configuration problems (2).
"""

from __future__ import annotations


class EmbReasonError(Exception):
    exit_code = 1


class DataError(EmbReasonError):
    exit_code = 3


class BackendError(EmbReasonError):
    exit_code = 4


class ConfigInvalid(EmbReasonError):
    exit_code = 2


# demonstrations / keypoints
class MissingFile(DataError):
    pass


class MalformedRecord(DataError):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class FrameCountMismatch(DataError):
    pass


class EmptyInput(DataError):
    pass


class TooFewFrames(DataError):
    pass


# dataset generation
class SamplingExhausted(DataError):
    pass


class TemplateFieldMissing(DataError):
    pass


class MissingAnnotation(DataError):
    pass


# training
class UnparseableResponse(DataError):
    pass


class NonFiniteGradient(DataError):
    pass


# generation backends
class BackendUnavailable(BackendError):
    pass


class BadRequest(BackendError):
    pass


class GenTimeout(BackendError):
    pass


# bench
class UnparseableVerdict(DataError):
    pass


class ScoreOutOfRange(DataError):
    pass


class ConstantInput(DataError):
    pass
