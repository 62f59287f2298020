"""Tree-walking interpreter with a hard fuel budget.

Every AST node evaluation costs one unit of fuel, so any script halts
within a bounded number of operations regardless of its control flow.
Collection sizes and integer widths are capped as well: fuel bounds the
number of operations, the caps bound the cost of each one.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .builtins import BUILTIN_TABLE, NATIVE_NAMES
from .errors import DslAssertionFailure, DslParseError, DslRuntimeError, FuelExhausted
from .parser import (
    Assign,
    Binary,
    Block,
    BoolOp,
    Call,
    ExprStmt,
    ForIn,
    Ident,
    If,
    Index,
    Let,
    ListLit,
    Literal,
    Node,
    Not,
    Repeat,
    Return,
    Script,
    ScriptKind,
    Unary,
    While,
)

DEFAULT_FUEL = 1_000_000
MAX_CALL_DEPTH = 32
MAX_COLLECTION = 1_000_000
MAX_INT_BITS = 4096
LOG_CAP = 10_000


class RunStatus(enum.Enum):
    OK = "ok"
    PARSE_ERROR = "parse_error"
    RUNTIME_ERROR = "runtime_error"
    FUEL_EXHAUSTED = "fuel_exhausted"
    ASSERTION_FAILURE = "assertion_failure"


@dataclass(frozen=True)
class RunOutcome:
    status: RunStatus
    message: str
    fuel_used: int
    log: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is RunStatus.OK

    def to_json(self) -> dict:
        return {
            "status": self.status.value,
            "message": self.message,
            "fuel_used": self.fuel_used,
            "log": list(self.log),
        }


class _ReturnSignal(Exception):
    def __init__(self, value):
        self.value = value


def _is_num(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class Interpreter:
    def __init__(self, script: Script, host: dict, fuel: int = DEFAULT_FUEL):
        if fuel <= 0:
            raise ValueError("fuel must be positive")
        self.script = script
        self.host = host
        self.fuel_limit = fuel
        self.fuel_left = fuel
        self.log: list[str] = []
        self._loops: list[tuple[str, int]] = []
        self._depth = 0

    @property
    def fuel_used(self) -> int:
        return self.fuel_limit - self.fuel_left

    def _tick(self, node: Node):
        if self.fuel_left == 0:
            if self._loops:
                kind, line = self._loops[-1]
                raise FuelExhausted(
                    f"fuel exhausted after {self.fuel_limit} operations inside "
                    f"{kind} loop starting at line {line}",
                    line=node.line,
                )
            raise FuelExhausted(
                f"fuel exhausted after {self.fuel_limit} operations", line=node.line
            )
        self.fuel_left -= 1

    # --- entry -----------------------------------------------------------

    def call_proc(self, name: str, args: tuple):
        proc = self.script.procs.get(name)
        if proc is None:
            raise DslRuntimeError(f"no procedure named {name!r}")
        if len(args) != len(proc.params):
            raise DslRuntimeError(
                f"{name} takes {len(proc.params)} argument(s), got {len(args)}",
                line=proc.line,
            )
        if self._depth >= MAX_CALL_DEPTH:
            raise DslRuntimeError(
                f"call depth limit of {MAX_CALL_DEPTH} exceeded calling {name!r}",
                line=proc.line,
            )
        self._depth += 1
        scope = dict(zip(proc.params, args))
        try:
            self._exec_block(proc.body, [scope])
        except _ReturnSignal as sig:
            return sig.value
        finally:
            self._depth -= 1
        return None

    # --- statements --------------------------------------------------------

    def _exec_block(self, block: Block, scopes: list[dict]):
        self._tick(block)
        scopes.append({})
        try:
            for stmt in block.stmts:
                self._exec_stmt(stmt, scopes)
        finally:
            scopes.pop()

    def _exec_stmt(self, stmt: Node, scopes: list[dict]):
        self._tick(stmt)
        if isinstance(stmt, Let):
            if stmt.name in scopes[-1]:
                raise DslRuntimeError(f"{stmt.name!r} already declared in this block", line=stmt.line)
            scopes[-1][stmt.name] = self._eval(stmt.expr, scopes)
        elif isinstance(stmt, Assign):
            value = self._eval(stmt.expr, scopes)
            for scope in reversed(scopes):
                if stmt.name in scope:
                    scope[stmt.name] = value
                    return
            raise DslRuntimeError(
                f"assignment to undeclared variable {stmt.name!r}; use let first", line=stmt.line
            )
        elif isinstance(stmt, ExprStmt):
            self._eval(stmt.expr, scopes)
        elif isinstance(stmt, Return):
            raise _ReturnSignal(None if stmt.expr is None else self._eval(stmt.expr, scopes))
        elif isinstance(stmt, If):
            if self._truthy(self._eval(stmt.cond, scopes)):
                self._exec_block(stmt.then, scopes)
            elif isinstance(stmt.orelse, Block):
                self._exec_block(stmt.orelse, scopes)
            elif isinstance(stmt.orelse, If):
                self._exec_stmt(stmt.orelse, scopes)
        elif isinstance(stmt, While):
            self._loops.append(("while", stmt.line))
            try:
                while True:
                    self._tick(stmt.cond)
                    if not self._truthy(self._eval(stmt.cond, scopes)):
                        break
                    self._exec_block(stmt.body, scopes)
            finally:
                self._loops.pop()
        elif isinstance(stmt, Repeat):
            count = self._eval(stmt.count, scopes)
            if not _is_num(count) or count != int(count) or count < 0:
                raise DslRuntimeError(
                    f"repeat count must be a non-negative integer, got {count!r}", line=stmt.line
                )
            self._loops.append(("repeat", stmt.line))
            try:
                for _ in range(int(count)):
                    self._exec_block(stmt.body, scopes)
            finally:
                self._loops.pop()
        elif isinstance(stmt, ForIn):
            items = self._eval(stmt.iterable, scopes)
            if not isinstance(items, list):
                raise DslRuntimeError(
                    f"for..in needs a list, got {type(items).__name__}", line=stmt.line
                )
            self._loops.append(("for", stmt.line))
            try:
                for item in list(items):
                    scopes.append({stmt.var: item})
                    try:
                        self._exec_block(stmt.body, scopes)
                    finally:
                        scopes.pop()
            finally:
                self._loops.pop()
        else:
            raise DslRuntimeError(f"unknown statement {type(stmt).__name__}", line=stmt.line)

    # --- expressions --------------------------------------------------------

    def _eval(self, node: Node, scopes: list[dict]):
        self._tick(node)
        if isinstance(node, Literal):
            return node.value
        if isinstance(node, Ident):
            for scope in reversed(scopes):
                if node.name in scope:
                    return scope[node.name]
            raise DslRuntimeError(f"undefined variable {node.name!r}", line=node.line)
        if isinstance(node, ListLit):
            return [self._eval(item, scopes) for item in node.items]
        if isinstance(node, Index):
            obj = self._eval(node.obj, scopes)
            idx = self._eval(node.index, scopes)
            if not isinstance(obj, (list, str)):
                raise DslRuntimeError(
                    f"cannot index a {type(obj).__name__}", line=node.line
                )
            if not isinstance(idx, int) or isinstance(idx, bool):
                raise DslRuntimeError(f"index must be an integer, got {idx!r}", line=node.line)
            if not (-len(obj) <= idx < len(obj)):
                raise DslRuntimeError(
                    f"index {idx} out of range for length {len(obj)}", line=node.line
                )
            return obj[idx]
        if isinstance(node, Unary):
            value = self._eval(node.operand, scopes)
            if not _is_num(value):
                raise DslRuntimeError(f"cannot negate {type(value).__name__}", line=node.line)
            return -value
        if isinstance(node, Not):
            return not self._truthy(self._eval(node.operand, scopes))
        if isinstance(node, BoolOp):
            left = self._truthy(self._eval(node.left, scopes))
            if node.op == "and":
                return left and self._truthy(self._eval(node.right, scopes))
            return left or self._truthy(self._eval(node.right, scopes))
        if isinstance(node, Binary):
            return self._binary(node, scopes)
        if isinstance(node, Call):
            return self._call(node, scopes)
        raise DslRuntimeError(f"unknown expression {type(node).__name__}", line=node.line)

    @staticmethod
    def _truthy(value) -> bool:
        return bool(value)

    def _binary(self, node: Binary, scopes: list[dict]):
        op = node.op
        left = self._eval(node.left, scopes)
        right = self._eval(node.right, scopes)

        if op == "==":
            return left == right
        if op == "!=":
            return left != right

        if op in ("<", "<=", ">", ">="):
            ok_pair = (_is_num(left) and _is_num(right)) or (
                isinstance(left, str) and isinstance(right, str)
            )
            if not ok_pair:
                raise DslRuntimeError(
                    f"cannot compare {type(left).__name__} with {type(right).__name__}",
                    line=node.line,
                )
            return {"<": left < right, "<=": left <= right, ">": left > right, ">=": left >= right}[op]

        if op == "+":
            if _is_num(left) and _is_num(right):
                return self._guard_int(left + right, node)
            if isinstance(left, str) and isinstance(right, str):
                if len(left) + len(right) > MAX_COLLECTION:
                    raise DslRuntimeError("string too large", line=node.line)
                return left + right
            if isinstance(left, list) and isinstance(right, list):
                if len(left) + len(right) > MAX_COLLECTION:
                    raise DslRuntimeError("list too large", line=node.line)
                return left + right
            raise DslRuntimeError(
                f"cannot add {type(left).__name__} and {type(right).__name__}", line=node.line
            )

        if not (_is_num(left) and _is_num(right)):
            raise DslRuntimeError(
                f"operator {op!r} needs numbers, got "
                f"{type(left).__name__} and {type(right).__name__}",
                line=node.line,
            )
        if op == "-":
            return self._guard_int(left - right, node)
        if op == "*":
            return self._guard_int(left * right, node)
        if op == "/":
            if right == 0:
                raise DslRuntimeError("division by zero", line=node.line)
            return left / right
        if op == "%":
            if right == 0:
                raise DslRuntimeError("modulo by zero", line=node.line)
            return left % right
        raise DslRuntimeError(f"unknown operator {op!r}", line=node.line)

    @staticmethod
    def _guard_int(value, node: Node):
        if isinstance(value, int) and value.bit_length() > MAX_INT_BITS:
            raise DslRuntimeError("integer overflow", line=node.line)
        return value

    # --- calls ---------------------------------------------------------------

    def _call(self, node: Call, scopes: list[dict]):
        args = [self._eval(a, scopes) for a in node.args]
        name = node.name

        if name in self.script.procs:
            return self.call_proc(name, tuple(args))

        spec = BUILTIN_TABLE.get(name)
        if spec is None:
            raise DslRuntimeError(f"unknown symbol {name!r}", line=node.line)
        if len(args) < spec.min_args or (spec.max_args is not None and len(args) > spec.max_args):
            want = (
                str(spec.min_args)
                if spec.min_args == spec.max_args
                else f"{spec.min_args}..{spec.max_args}"
            )
            raise DslRuntimeError(
                f"{name} takes {want} argument(s), got {len(args)}", line=node.line
            )

        if name in NATIVE_NAMES:
            return self._native(name, args, node)

        fn = self.host.get(name)
        if fn is None:
            raise DslRuntimeError(
                f"{name!r} is not available in this script context", line=node.line
            )
        try:
            return fn(*args)
        except (DslRuntimeError, DslAssertionFailure, FuelExhausted):
            raise
        except Exception as exc:
            raise DslRuntimeError(f"{name}: {exc}", line=node.line) from exc

    def _native(self, name: str, args: list, node: Call):
        line = node.line
        if name == "len":
            (x,) = args
            if not isinstance(x, (list, str)):
                raise DslRuntimeError(f"len needs a list or string, got {type(x).__name__}", line=line)
            return len(x)
        if name == "range":
            for a in args:
                if not isinstance(a, int) or isinstance(a, bool):
                    raise DslRuntimeError(f"range needs integers, got {a!r}", line=line)
            lo, hi = (0, args[0]) if len(args) == 1 else (args[0], args[1])
            if hi - lo > MAX_COLLECTION:
                raise DslRuntimeError("range too large", line=line)
            return list(range(lo, hi))
        if name == "abs":
            (x,) = args
            if not _is_num(x):
                raise DslRuntimeError(f"abs needs a number, got {type(x).__name__}", line=line)
            return abs(x)
        if name in ("min", "max"):
            values = args
            if len(args) == 1:
                if not isinstance(args[0], list):
                    raise DslRuntimeError(f"{name} with one argument needs a list", line=line)
                values = args[0]
                if not values:
                    raise DslRuntimeError(f"{name} of an empty list", line=line)
            try:
                return min(values) if name == "min" else max(values)
            except TypeError:
                raise DslRuntimeError(f"{name} arguments are not comparable", line=line)
        if name == "append":
            target, item = args
            if not isinstance(target, list):
                raise DslRuntimeError(f"append needs a list, got {type(target).__name__}", line=line)
            if len(target) >= MAX_COLLECTION:
                raise DslRuntimeError("list too large", line=line)
            target.append(item)
            return None
        if name == "log":
            (msg,) = args
            if len(self.log) < LOG_CAP:
                self.log.append(self._render(msg))
            return None
        if name == "assert_true":
            cond, msg = args
            if not self._truthy(cond):
                raise DslAssertionFailure(self._render(msg), line=line)
            return None
        if name == "assert_greater":
            a, b, msg = args
            ok_pair = (_is_num(a) and _is_num(b)) or (isinstance(a, str) and isinstance(b, str))
            if not ok_pair:
                raise DslRuntimeError("assert_greater arguments are not comparable", line=line)
            if not a > b:
                raise DslAssertionFailure(self._render(msg), line=line)
            return None
        if name == "assert_almost_equal":
            a, b, delta, msg = args
            if not (_is_num(a) and _is_num(b) and _is_num(delta)):
                raise DslRuntimeError("assert_almost_equal needs numbers", line=line)
            if abs(a - b) > delta:
                raise DslAssertionFailure(
                    f"{self._render(msg)} (|{a} - {b}| > {delta})", line=line
                )
            return None
        raise DslRuntimeError(f"native builtin {name!r} not implemented", line=line)

    @staticmethod
    def _render(value) -> str:
        if isinstance(value, str):
            return value
        if value is None:
            return "none"
        if isinstance(value, bool):
            return "true" if value else "false"
        return str(value)


def run_proc(
    script: Script,
    proc_name: str,
    host: dict,
    args: tuple = (),
    fuel: int = DEFAULT_FUEL,
) -> RunOutcome:
    """Execute one procedure and report the outcome, never raising."""
    interp = Interpreter(script, host, fuel=fuel)
    try:
        interp.call_proc(proc_name, args)
    except DslAssertionFailure as exc:
        return RunOutcome(RunStatus.ASSERTION_FAILURE, str(exc), interp.fuel_used, tuple(interp.log))
    except FuelExhausted as exc:
        return RunOutcome(RunStatus.FUEL_EXHAUSTED, str(exc), interp.fuel_used, tuple(interp.log))
    except DslParseError as exc:
        return RunOutcome(RunStatus.PARSE_ERROR, str(exc), interp.fuel_used, tuple(interp.log))
    except DslRuntimeError as exc:
        return RunOutcome(RunStatus.RUNTIME_ERROR, str(exc), interp.fuel_used, tuple(interp.log))
    except Exception as exc:  # noqa: BLE001 - host bugs surface as runtime errors
        return RunOutcome(
            RunStatus.RUNTIME_ERROR, f"internal error: {exc!r}", interp.fuel_used, tuple(interp.log)
        )
    return RunOutcome(RunStatus.OK, "", interp.fuel_used, tuple(interp.log))


def run(script: Script, env, fuel: int = DEFAULT_FUEL, seed: int | None = None, proc: str | None = None) -> RunOutcome:
    """Run a script against a simulation environment.

    Simulation scripts run setup(env). Test batteries run the named test,
    or every test_* in definition order under one shared fuel budget,
    stopping at the first failure. The seed, when given, reseeds the
    environment's RNG first so reruns are identical.
    """
    if seed is not None:
        env.seed(seed)
    if script.kind == ScriptKind.SIMULATION:
        return run_proc(script, "setup", env.setup_builtins(), args=(env,), fuel=fuel)

    names = [proc] if proc is not None else script.test_names()
    host = env.test_builtins()
    remaining = fuel
    used_total = 0
    logs: list[str] = []
    for name in names:
        outcome = run_proc(script, name, host, fuel=remaining)
        used_total += outcome.fuel_used
        remaining -= outcome.fuel_used
        logs.extend(outcome.log)
        if not outcome.ok:
            msg = outcome.message if proc is not None else f"{name}: {outcome.message}"
            return RunOutcome(outcome.status, msg, used_total, tuple(logs))
        if remaining <= 0 and names[-1] != name:
            return RunOutcome(
                RunStatus.FUEL_EXHAUSTED,
                f"fuel exhausted after {fuel} operations across tests",
                used_total,
                tuple(logs),
            )
    return RunOutcome(RunStatus.OK, "", used_total, tuple(logs))
