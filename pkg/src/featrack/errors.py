"""Exception hierarchy shared by all featrack modules."""

from __future__ import annotations


class FeatrackError(Exception):
    """Base class for every error raised by featrack."""


class ExpressionSyntaxError(FeatrackError):
    def __init__(self, message: str, text: str, position: int) -> None:
        self.text = text
        self.position = position
        super().__init__(f"{message} at position {position} in {text!r}")


class ModelError(FeatrackError):
    """A model document (feature model, configuration, index, portfolio) is invalid."""

    def __init__(self, message: str, location: str | None = None) -> None:
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


class ScanError(FeatrackError):
    """Unbalanced or malformed variability directives."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None) -> None:
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += source
        if line is not None:
            where += f":{line + 1}" if where else f"line {line + 1}"
        super().__init__(f"{where}: {message}" if where else message)


class FeedbackModelError(FeatrackError):
    pass


class TemplateError(FeatrackError):
    pass


class TransformError(FeatrackError):
    """Aggregates per-pointcut failures found during feedback transformation."""

    def __init__(self, problems: list["TransformProblem"]) -> None:
        self.problems = problems
        lines = [f"{p.kind}: {p.message}" for p in problems]
        super().__init__("feedback transformation failed:\n  " + "\n  ".join(lines))


class TransformProblem:
    __slots__ = ("kind", "message")

    def __init__(self, kind: str, message: str) -> None:
        self.kind = kind
        self.message = message

    def __repr__(self) -> str:
        return f"TransformProblem({self.kind!r}, {self.message!r})"


class OutputExistsError(FeatrackError):
    pass


class EventRejected(FeatrackError):
    """The event is malformed or not allowed; retrying will not help."""


class StorageError(FeatrackError):
    """The log could not be written; the caller may retry."""


class QueryError(FeatrackError):
    pass


class PullError(FeatrackError):
    def __init__(self, diagnostics: list[str]) -> None:
        self.diagnostics = diagnostics
        super().__init__("feedback pull failed:\n  " + "\n  ".join(diagnostics))


class ScenarioError(FeatrackError):
    pass


class HitParseError(FeatrackError):
    pass
