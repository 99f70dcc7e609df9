"""Parser for torus vector-field expressions.

Grammar (whitespace is insignificant)::

    expr  := ['+'|'-'] term (('+'|'-') term)*
    term  := coeff ['*' trig] '*' basis  |  trig '*' basis
    trig  := ('sin'|'cos') '(' int ',' int ')'     # trig(2*pi*(k1*x + k2*y))
    basis := 'dx' | 'dy'
    coeff := decimal literal

Examples: ``"1*dx + 0.5*dy"``, ``"sin(1,0)*dy"``, ``"2*cos(0,-1)*dx - dy"`` is rejected
(a bare basis needs a coefficient).
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z]+)|(?P<op>[-+*(),]))"
)


@dataclass(frozen=True)
class Term:
    coeff: float
    trig: str | None  # None, "sin" or "cos"
    k1: int
    k2: int
    basis: str  # "dx" or "dy"


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            start = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(text, start, "a number, name or one of + - * ( ) ,")
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected: str):
        raise ParseError(self.text, self.peek()[2], expected)

    def expect_op(self, op: str):
        kind, val, _ = self.peek()
        if kind != "op" or val != op:
            self.fail(f"{op!r}")
        self.take()

    def integer(self) -> int:
        sign = 1
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            sign = -1 if val == "-" else 1
            self.take()
            kind, val, _ = self.peek()
        if kind != "num" or not val.isdigit():
            self.fail("an integer")
        self.take()
        return sign * int(val)

    def trig(self) -> tuple[str, int, int]:
        _, name, _ = self.take()
        self.expect_op("(")
        k1 = self.integer()
        self.expect_op(",")
        k2 = self.integer()
        self.expect_op(")")
        return name, k1, k2

    def basis(self) -> str:
        kind, val, _ = self.peek()
        if kind != "name" or val not in ("dx", "dy"):
            self.fail("'dx' or 'dy'")
        self.take()
        return val

    def term(self, sign: float) -> Term:
        kind, val, _ = self.peek()
        coeff = 1.0
        trig = None
        k1 = k2 = 0
        if kind == "num":
            self.take()
            coeff = float(val)
            self.expect_op("*")
            kind, val, _ = self.peek()
            if kind == "name" and val in ("sin", "cos"):
                trig, k1, k2 = self.trig()
                self.expect_op("*")
        elif kind == "name" and val in ("sin", "cos"):
            trig, k1, k2 = self.trig()
            self.expect_op("*")
        else:
            self.fail("a coefficient, 'sin' or 'cos'")
        return Term(sign * coeff, trig, k1, k2, self.basis())

    def expr(self) -> list[Term]:
        sign = 1.0
        kind, val, _ = self.peek()
        if kind == "op" and val in "+-":
            sign = -1.0 if val == "-" else 1.0
            self.take()
        terms = [self.term(sign)]
        while True:
            kind, val, _ = self.peek()
            if kind == "end":
                return terms
            if kind == "op" and val in "+-":
                self.take()
                terms.append(self.term(-1.0 if val == "-" else 1.0))
            else:
                self.fail("'+', '-' or end of input")


def parse_torus_expr(text: str) -> list[Term]:
    return _Parser(text).expr()
