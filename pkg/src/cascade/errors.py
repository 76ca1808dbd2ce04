"""Exception hierarchy shared by every cascade module.

Every domain error carries a stable ``code`` string; the CLI serialises it as
machine-readable JSON on standard error.
"""

from __future__ import annotations

from dataclasses import dataclass


class CascadeError(Exception):
    code = "CascadeError"

    def __init__(self, message: str = "", **details):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": self.message}
        if self.details:
            out["details"] = self.details
        return out


@dataclass(frozen=True)
class Violation:
    """One broken invariant found while validating a structure."""

    code: str
    path: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "path": self.path, "message": self.message}


class ValidationError(CascadeError):
    code = "ValidationError"

    def __init__(self, violations):
        self.violations = tuple(violations)
        summary = "; ".join(f"{v.code} at {v.path}: {v.message}" for v in self.violations)
        super().__init__(summary)

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]

    def to_dict(self) -> dict:
        return {
            "error": self.code,
            "message": self.message,
            "violations": [v.to_dict() for v in self.violations],
        }


class SpecSyntaxError(CascadeError):
    code = "SyntaxError"

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})", line=line, column=column)
        self.line = line
        self.column = column


class SchemaError(CascadeError):
    code = "SchemaError"

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}", path=path)
        self.path = path


class NegativeInput(CascadeError):
    code = "NegativeInput"


class BadWeights(CascadeError):
    code = "BadWeights"


class LengthMismatch(CascadeError):
    code = "LengthMismatch"


class UnknownMetric(CascadeError):
    code = "UnknownMetric"


class UnknownPosition(CascadeError):
    code = "UnknownPosition"


class InconsistentTrace(CascadeError):
    code = "InconsistentTrace"


class BadCorrelation(CascadeError):
    code = "BadCorrelation"


class BadPool(CascadeError):
    code = "BadPool"


class TooLarge(CascadeError):
    code = "TooLarge"


class UnsupportedDependence(CascadeError):
    code = "UnsupportedDependence"


class RaggedInput(CascadeError):
    code = "RaggedInput"


class EmptyInput(CascadeError):
    code = "EmptyInput"


class WeightMismatch(CascadeError):
    code = "WeightMismatch"


class BadLevel(CascadeError):
    code = "BadLevel"


class BadCurve(CascadeError):
    code = "BadCurve"


class BadDesign(CascadeError):
    code = "BadDesign"


class BudgetExceeded(CascadeError):
    code = "BudgetExceeded"


class EmptyFeasibleSet(CascadeError):
    code = "EmptyFeasibleSet"

    def __init__(self, message: str, nearest=None):
        super().__init__(message)
        self.nearest = nearest
