"""Exception hierarchy shared across the pipeline."""

from __future__ import annotations


class ForgeError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(ForgeError):
    """A file or model reply does not match its expected schema."""

    def __init__(self, message: str, *, line: int | None = None, field: str | None = None):
        detail = message
        if line is not None:
            detail += f" (line {line})"
        if field is not None:
            detail += f" (field {field!r})"
        super().__init__(detail)
        self.line = line
        self.field = field


class DuplicateIdError(SchemaError):
    """Two records claim the same identifier."""


class DimensionMismatchError(ForgeError):
    """Array or embedding dimensions disagree."""


class EmptyProjectionError(ForgeError):
    """A mask projected to zero valid 3D points."""


class ProviderError(ForgeError):
    """A chat/embedding provider failed after exhausting retries."""

    def __init__(self, message: str, *, attempts: int = 1, request_tag: str | None = None):
        detail = message
        if request_tag:
            detail += f" [tag={request_tag}]"
        if attempts > 1:
            detail += f" (after {attempts} attempts)"
        super().__init__(detail)
        self.attempts = attempts
        self.request_tag = request_tag


class EmptyReplyError(ProviderError):
    """The provider returned an empty reply."""


class CassetteMissError(ProviderError):
    """Replay mode found no recorded reply for a request fingerprint."""


class AuthMissingError(ProviderError):
    """Live mode requested but no API key is configured."""


class UnparseableReplyError(ForgeError):
    """A model reply could not be parsed even after a re-ask."""


class BudgetExhaustedError(ForgeError):
    """The refinement fix budget is spent."""


class SimError(ForgeError):
    """Invalid operation on the tabletop simulation."""


class NoGoalsError(SimError):
    """reset() called before any goal was registered."""


class ConfigError(ForgeError):
    """Bad configuration file or flags."""


class StageError(ForgeError):
    """A pipeline stage failed; carries the stage name."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage {stage!r}: {message}")
        self.stage = stage
