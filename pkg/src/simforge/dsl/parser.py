"""Recursive descent parser producing a small statement/expression AST.

Scripts are a flat list of procedure definitions. A simulation script must
define `proc setup(env)`; a test battery must define at least one zero-arg
procedure named `test_*`. Every call target is resolved at parse time
against the builtin table and the script's own procedures, so an unknown
or misspelled symbol is a parse error, not a runtime surprise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from .builtins import BUILTIN_TABLE
from .errors import DslParseError
from .lexer import Token, tokenize


class ScriptKind(enum.Enum):
    SIMULATION = "simulation"
    TEST_BATTERY = "test_battery"


# --- AST ---------------------------------------------------------------


@dataclass(frozen=True)
class Node:
    line: int
    col: int


@dataclass(frozen=True)
class Literal(Node):
    value: object


@dataclass(frozen=True)
class Ident(Node):
    name: str


@dataclass(frozen=True)
class ListLit(Node):
    items: tuple


@dataclass(frozen=True)
class Index(Node):
    obj: Node
    index: Node


@dataclass(frozen=True)
class Unary(Node):
    op: str
    operand: Node


@dataclass(frozen=True)
class Binary(Node):
    op: str
    left: Node
    right: Node


@dataclass(frozen=True)
class BoolOp(Node):
    op: str  # "and" | "or"
    left: Node
    right: Node


@dataclass(frozen=True)
class Not(Node):
    operand: Node


@dataclass(frozen=True)
class Call(Node):
    name: str
    args: tuple


@dataclass(frozen=True)
class Block(Node):
    stmts: tuple


@dataclass(frozen=True)
class Let(Node):
    name: str
    expr: Node


@dataclass(frozen=True)
class Assign(Node):
    name: str
    expr: Node


@dataclass(frozen=True)
class ExprStmt(Node):
    expr: Node


@dataclass(frozen=True)
class Return(Node):
    expr: Node | None


@dataclass(frozen=True)
class If(Node):
    cond: Node
    then: Block
    orelse: Node | None  # Block or nested If


@dataclass(frozen=True)
class While(Node):
    cond: Node
    body: Block


@dataclass(frozen=True)
class Repeat(Node):
    count: Node
    body: Block


@dataclass(frozen=True)
class ForIn(Node):
    var: str
    iterable: Node
    body: Block


@dataclass(frozen=True)
class ProcDef(Node):
    name: str
    params: tuple
    body: Block


@dataclass
class Script:
    source: str
    kind: ScriptKind
    procs: dict[str, ProcDef] = field(default_factory=dict)

    def test_names(self) -> list[str]:
        return [n for n in self.procs if n.startswith("test_")]


# --- Parser ------------------------------------------------------------


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    @property
    def cur(self) -> Token:
        return self.tokens[self.pos]

    def err(self, msg: str, tok: Token | None = None):
        t = tok or self.cur
        raise DslParseError(msg, line=t.line, col=t.col)

    def advance(self) -> Token:
        tok = self.cur
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def match(self, kind: str, value: str | None = None) -> bool:
        return self.cur.kind == kind and (value is None or self.cur.value == value)

    def expect(self, kind: str, value: str | None = None) -> Token:
        if not self.match(kind, value):
            want = value if value is not None else kind
            got = self.cur.value or self.cur.kind
            self.err(f"expected {want!r}, got {got!r}")
        return self.advance()

    def parse_script(self) -> list[ProcDef]:
        procs: list[ProcDef] = []
        while not self.match("eof"):
            procs.append(self.parse_proc())
        return procs

    def parse_proc(self) -> ProcDef:
        start = self.expect("keyword", "proc")
        name = self.expect("ident").value
        self.expect("op", "(")
        params: list[str] = []
        if not self.match("op", ")"):
            params.append(self.expect("ident").value)
            while self.match("op", ","):
                self.advance()
                params.append(self.expect("ident").value)
        self.expect("op", ")")
        body = self.parse_block()
        if len(set(params)) != len(params):
            self.err(f"duplicate parameter in proc {name!r}", start)
        return ProcDef(start.line, start.col, name, tuple(params), body)

    def parse_block(self) -> Block:
        start = self.expect("op", "{")
        stmts: list[Node] = []
        while not self.match("op", "}"):
            if self.match("eof"):
                self.err("unclosed block: missing '}'", start)
            stmts.append(self.parse_stmt())
        self.expect("op", "}")
        return Block(start.line, start.col, tuple(stmts))

    def parse_stmt(self) -> Node:
        tok = self.cur
        if tok.kind == "keyword":
            if tok.value == "let":
                self.advance()
                name = self.expect("ident").value
                self.expect("op", "=")
                return Let(tok.line, tok.col, name, self.parse_expr())
            if tok.value == "if":
                return self.parse_if()
            if tok.value == "while":
                self.advance()
                cond = self.parse_expr()
                return While(tok.line, tok.col, cond, self.parse_block())
            if tok.value == "repeat":
                self.advance()
                count = self.parse_expr()
                return Repeat(tok.line, tok.col, count, self.parse_block())
            if tok.value == "for":
                self.advance()
                var = self.expect("ident").value
                self.expect("keyword", "in")
                iterable = self.parse_expr()
                return ForIn(tok.line, tok.col, var, iterable, self.parse_block())
            if tok.value == "return":
                self.advance()
                if self.match("op", "}"):
                    return Return(tok.line, tok.col, None)
                return Return(tok.line, tok.col, self.parse_expr())
            self.err(f"unexpected keyword {tok.value!r} at statement start")
        if tok.kind == "ident":
            nxt = self.tokens[self.pos + 1]
            if nxt.kind == "op" and nxt.value == "=":
                self.advance()
                self.advance()
                return Assign(tok.line, tok.col, tok.value, self.parse_expr())
            if nxt.kind == "op" and nxt.value == "(":
                return ExprStmt(tok.line, tok.col, self.parse_expr())
            self.err(f"expected '=' or '(' after {tok.value!r}")
        self.err(f"expected a statement, got {tok.value or tok.kind!r}")

    def parse_if(self) -> If:
        tok = self.expect("keyword", "if")
        cond = self.parse_expr()
        then = self.parse_block()
        orelse: Node | None = None
        if self.match("keyword", "else"):
            self.advance()
            if self.match("keyword", "if"):
                orelse = self.parse_if()
            else:
                orelse = self.parse_block()
        return If(tok.line, tok.col, cond, then, orelse)

    # expression precedence: or < and < not < comparison < +- < */% < unary-

    def parse_expr(self) -> Node:
        return self.parse_or()

    def parse_or(self) -> Node:
        left = self.parse_and()
        while self.match("keyword", "or"):
            tok = self.advance()
            left = BoolOp(tok.line, tok.col, "or", left, self.parse_and())
        return left

    def parse_and(self) -> Node:
        left = self.parse_not()
        while self.match("keyword", "and"):
            tok = self.advance()
            left = BoolOp(tok.line, tok.col, "and", left, self.parse_not())
        return left

    def parse_not(self) -> Node:
        if self.match("keyword", "not"):
            tok = self.advance()
            return Not(tok.line, tok.col, self.parse_not())
        return self.parse_comparison()

    def parse_comparison(self) -> Node:
        left = self.parse_arith()
        if self.cur.kind == "op" and self.cur.value in ("==", "!=", "<", "<=", ">", ">="):
            tok = self.advance()
            return Binary(tok.line, tok.col, tok.value, left, self.parse_arith())
        return left

    def parse_arith(self) -> Node:
        left = self.parse_term()
        while self.cur.kind == "op" and self.cur.value in ("+", "-"):
            tok = self.advance()
            left = Binary(tok.line, tok.col, tok.value, left, self.parse_term())
        return left

    def parse_term(self) -> Node:
        left = self.parse_unary()
        while self.cur.kind == "op" and self.cur.value in ("*", "/", "%"):
            tok = self.advance()
            left = Binary(tok.line, tok.col, tok.value, left, self.parse_unary())
        return left

    def parse_unary(self) -> Node:
        if self.match("op", "-"):
            tok = self.advance()
            return Unary(tok.line, tok.col, "-", self.parse_unary())
        return self.parse_postfix()

    def parse_postfix(self) -> Node:
        node = self.parse_primary()
        while self.match("op", "["):
            tok = self.advance()
            index = self.parse_expr()
            self.expect("op", "]")
            node = Index(tok.line, tok.col, node, index)
        return node

    def parse_primary(self) -> Node:
        tok = self.cur
        if tok.kind == "number":
            self.advance()
            text = tok.value
            value = float(text) if ("." in text or "e" in text or "E" in text) else int(text)
            return Literal(tok.line, tok.col, value)
        if tok.kind == "string":
            self.advance()
            return Literal(tok.line, tok.col, tok.value)
        if tok.kind == "keyword" and tok.value in ("true", "false", "none"):
            self.advance()
            value = {"true": True, "false": False, "none": None}[tok.value]
            return Literal(tok.line, tok.col, value)
        if tok.kind == "ident":
            self.advance()
            if self.match("op", "("):
                self.advance()
                args: list[Node] = []
                if not self.match("op", ")"):
                    args.append(self.parse_expr())
                    while self.match("op", ","):
                        self.advance()
                        args.append(self.parse_expr())
                self.expect("op", ")")
                return Call(tok.line, tok.col, tok.value, tuple(args))
            return Ident(tok.line, tok.col, tok.value)
        if tok.kind == "op" and tok.value == "(":
            self.advance()
            inner = self.parse_expr()
            self.expect("op", ")")
            return inner
        if tok.kind == "op" and tok.value == "[":
            self.advance()
            items: list[Node] = []
            if not self.match("op", "]"):
                items.append(self.parse_expr())
                while self.match("op", ","):
                    self.advance()
                    items.append(self.parse_expr())
            self.expect("op", "]")
            return ListLit(tok.line, tok.col, tuple(items))
        self.err(f"expected an expression, got {tok.value or tok.kind!r}")


def _walk_calls(node: Node):
    """Yield every Call node in a subtree."""
    stack = [node]
    while stack:
        n = stack.pop()
        if isinstance(n, Call):
            yield n
            stack.extend(n.args)
        elif isinstance(n, Block):
            stack.extend(n.stmts)
        elif isinstance(n, (Let, Assign, ExprStmt)):
            stack.append(n.expr)
        elif isinstance(n, Return):
            if n.expr is not None:
                stack.append(n.expr)
        elif isinstance(n, If):
            stack.extend([n.cond, n.then])
            if n.orelse is not None:
                stack.append(n.orelse)
        elif isinstance(n, While):
            stack.extend([n.cond, n.body])
        elif isinstance(n, Repeat):
            stack.extend([n.count, n.body])
        elif isinstance(n, ForIn):
            stack.extend([n.iterable, n.body])
        elif isinstance(n, ListLit):
            stack.extend(n.items)
        elif isinstance(n, Index):
            stack.extend([n.obj, n.index])
        elif isinstance(n, (Unary, Not)):
            stack.append(n.operand)
        elif isinstance(n, (Binary, BoolOp)):
            stack.extend([n.left, n.right])


def parse(source: str, kind: ScriptKind) -> Script:
    """Parse and validate a script; raises DslParseError with line/column."""
    tokens = tokenize(source)
    proc_list = _Parser(tokens).parse_script()

    procs: dict[str, ProcDef] = {}
    for proc in proc_list:
        if proc.name in BUILTIN_TABLE:
            raise DslParseError(
                f"cannot redefine builtin {proc.name!r}", line=proc.line, col=proc.col
            )
        if proc.name in procs:
            raise DslParseError(
                f"duplicate procedure {proc.name!r}", line=proc.line, col=proc.col
            )
        procs[proc.name] = proc

    for proc in proc_list:
        for call in _walk_calls(proc.body):
            if call.name not in BUILTIN_TABLE and call.name not in procs:
                raise DslParseError(
                    f"unknown symbol {call.name!r}", line=call.line, col=call.col
                )

    if kind == ScriptKind.SIMULATION:
        setup = procs.get("setup")
        if setup is None:
            raise DslParseError("simulation script must define proc setup(env)", line=1, col=1)
        if len(setup.params) != 1:
            raise DslParseError(
                "proc setup must take exactly one parameter",
                line=setup.line, col=setup.col,
            )
    elif kind == ScriptKind.TEST_BATTERY:
        tests = [p for n, p in procs.items() if n.startswith("test_")]
        if not tests:
            raise DslParseError(
                "test battery must define at least one proc named test_*", line=1, col=1
            )
        for t in tests:
            if t.params:
                raise DslParseError(
                    f"test procedure {t.name!r} must take no parameters",
                    line=t.line, col=t.col,
                )

    return Script(source=source, kind=kind, procs=procs)
