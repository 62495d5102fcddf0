from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING, Any

from pydantic import ValidationError

if TYPE_CHECKING:
    from src.services.trainer.checkpoint import Checkpoint


class XlignException(Exception):
    def __init__(self, message: str = "An error occurred", code: int = 1):
        self.message = message
        self.code = code
        super().__init__(message)


class ConfigurationError(XlignException):
    def __init__(self, message: str = "Invalid configuration", code: int = 2):
        super().__init__(message, code)


# tensor
class DimensionError(XlignException):
    pass


class RankError(XlignException):
    pass


class DegenerateVectorError(XlignException):
    pass


class InvalidValueError(XlignException):
    pass


class EvaluationError(XlignException):
    pass


# encoder
class TokenError(XlignException):
    pass


class LengthError(XlignException):
    pass


class MissingImageError(XlignException):
    pass


# corpus / objective
class BatchConstructionError(XlignException):
    pass


class CorpusFormatError(XlignException):
    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where = f"{path}"
        if line is not None:
            where = f"{where}:{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message, code=2)


class EmptyDatasetError(XlignException):
    pass


class SizeError(XlignException):
    pass


# trainer
class NoTrainingError(XlignException):
    def __init__(self, message: str = "Scenario zero_shot does not train; run eval instead"):
        super().__init__(message, code=2)


class NonFiniteGradientError(XlignException):
    def __init__(self, parameter: str, detail: str = ""):
        self.parameter = parameter
        message = f"Non-finite gradient for parameter '{parameter}'"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(message)


class TrainingDivergedError(XlignException):
    def __init__(self, step: int, loss: float, last_good: Checkpoint | None = None):
        self.step = step
        self.loss = loss
        self.last_good = last_good
        super().__init__(f"Loss diverged at step {step} (loss={loss})")


# eval
class KOutOfRangeError(XlignException):
    pass


class PivotMissingError(XlignException):
    pass


@dataclass(slots=True)
class ErrorResponse:
    message: str
    code: int
    kind: str

    @staticmethod
    def from_exception(error: BaseException) -> "ErrorResponse":
        if isinstance(error, XlignException):
            return ErrorResponse(error.message, error.code, type(error).__name__)

        if isinstance(error, ValidationError):
            first = error.errors()[0] if error.errors() else {}
            field = ".".join(str(part) for part in first.get("loc", ()))
            detail = str(first.get("msg", error)).removeprefix("Value error, ")
            message = f"Invalid field '{field}': {detail}" if field else f"Invalid config: {detail}"
            return ErrorResponse(message, 2, "ValidationError")

        return ErrorResponse(str(error) or "An error occurred", 1, type(error).__name__)

    def to_dict(self) -> dict[str, Any]:
        return {"status": False, "message": self.message, "code": self.code, "kind": self.kind}
