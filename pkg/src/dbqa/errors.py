"""Exception hierarchy shared by all dbqa modules."""

from __future__ import annotations


class DbqaError(Exception):
    """Base class for every error raised by this package."""


class DatasetError(DbqaError):
    """Malformed dataset file: unparseable line or invalid record (message carries line numbers)."""


class IntegrityError(DbqaError):
    """Duplicate identifier where uniqueness is required (record ids, chunk ids, tool names)."""


class TransportError(DbqaError):
    """Remote endpoint unreachable or timed out after all retry attempts."""


class ServiceError(DbqaError):
    """Remote service responded, but with a non-2xx status or an unusable body."""


class ScriptExhaustedError(DbqaError):
    """A scripted backend received more calls than it has scripted responses."""


class ScriptMismatchError(DbqaError):
    """A scripted response's matcher substring was not found in the rendered prompt."""


class JudgeFormatError(DbqaError):
    """Judge output did not parse into a verdict token."""


class RenderError(DbqaError):
    """Template problem: unknown template id, missing slot binding, or extra binding."""


class CotParseError(DbqaError):
    """Model output does not contain one complete reasoning step."""


class GenerationError(DbqaError):
    """A dataset-generation stage produced no usable output."""


class ConstraintError(DbqaError):
    """A generation constraint could not be satisfied; carries the partial batch."""

    def __init__(self, message: str, partial: list | None = None):
        super().__init__(message)
        self.partial = partial if partial is not None else []
