"""Sandboxed scripting language for simulation setup and test batteries.

Scripts are parsed to an AST and interpreted with a hard fuel limit, so a
generated program can never hang the host. There is no I/O, no imports,
and no way to call anything outside the audited builtin table.
"""

from .builtins import BUILTIN_TABLE, BuiltinSpec, Scope, builtin_reference
from .errors import (
    DslAssertionFailure,
    DslError,
    DslParseError,
    DslRuntimeError,
    FuelExhausted,
)
from .interpreter import DEFAULT_FUEL, MAX_CALL_DEPTH, RunOutcome, RunStatus, run, run_proc
from .parser import Script, ScriptKind, parse

__all__ = [
    "BUILTIN_TABLE",
    "BuiltinSpec",
    "Scope",
    "builtin_reference",
    "DslAssertionFailure",
    "DslError",
    "DslParseError",
    "DslRuntimeError",
    "FuelExhausted",
    "DEFAULT_FUEL",
    "MAX_CALL_DEPTH",
    "RunOutcome",
    "RunStatus",
    "run",
    "run_proc",
    "Script",
    "ScriptKind",
    "parse",
]
