"""Tokenizer. Newlines are plain whitespace; `#` comments run to end of line."""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DslParseError

KEYWORDS = frozenset(
    ["proc", "let", "if", "else", "while", "repeat", "for", "in", "return",
     "and", "or", "not", "true", "false", "none"]
)

# Two-char operators first so lexing is greedy.
_TWO_CHAR = ("==", "!=", "<=", ">=")
_ONE_CHAR = "+-*/%<>=()[]{},"


@dataclass(frozen=True)
class Token:
    kind: str  # "ident" | "keyword" | "number" | "string" | "op" | "eof"
    value: str
    line: int
    col: int

    def __repr__(self):
        return f"Token({self.kind} {self.value!r} @{self.line}:{self.col})"


def tokenize(source: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(source)

    def err(msg: str):
        raise DslParseError(msg, line=line, col=col)

    while i < n:
        ch = source[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and source[i] != "\n":
                i += 1
            continue

        start_line, start_col = line, col

        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (source[j].isalnum() or source[j] == "_"):
                j += 1
            word = source[i:j]
            kind = "keyword" if word in KEYWORDS else "ident"
            tokens.append(Token(kind, word, start_line, start_col))
            col += j - i
            i = j
            continue

        if ch.isdigit() or (ch == "." and i + 1 < n and source[i + 1].isdigit()):
            j = i
            while j < n and source[j].isdigit():
                j += 1
            if j < n and source[j] == ".":
                j += 1
                while j < n and source[j].isdigit():
                    j += 1
            if j < n and source[j] in "eE":
                k = j + 1
                if k < n and source[k] in "+-":
                    k += 1
                if k >= n or not source[k].isdigit():
                    err(f"malformed number {source[i:k]!r}")
                j = k
                while j < n and source[j].isdigit():
                    j += 1
            tokens.append(Token("number", source[i:j], start_line, start_col))
            col += j - i
            i = j
            continue

        if ch == '"':
            j = i + 1
            out = []
            while True:
                if j >= n or source[j] == "\n":
                    err("unterminated string literal")
                c = source[j]
                if c == '"':
                    break
                if c == "\\":
                    j += 1
                    if j >= n:
                        err("unterminated string literal")
                    esc = source[j]
                    mapped = {"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(esc)
                    if mapped is None:
                        err(f"unknown escape \\{esc}")
                    out.append(mapped)
                else:
                    out.append(c)
                j += 1
            tokens.append(Token("string", "".join(out), start_line, start_col))
            col += (j + 1) - i
            i = j + 1
            continue

        two = source[i : i + 2]
        if two in _TWO_CHAR:
            tokens.append(Token("op", two, start_line, start_col))
            i += 2
            col += 2
            continue
        if ch in _ONE_CHAR:
            tokens.append(Token("op", ch, start_line, start_col))
            i += 1
            col += 1
            continue

        err(f"unexpected character {ch!r}")

    tokens.append(Token("eof", "", line, col))
    return tokens
