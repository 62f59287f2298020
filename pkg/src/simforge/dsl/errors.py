"""Script-level failures. Each carries the source line it happened on."""

from __future__ import annotations


class DslError(Exception):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        self.line = line
        self.col = col
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")
        self.bare_message = message


class DslParseError(DslError):
    pass


class DslRuntimeError(DslError):
    pass


class FuelExhausted(DslError):
    pass


class DslAssertionFailure(DslError):
    """Raised by the assert_* builtins; carries the script's own message."""
