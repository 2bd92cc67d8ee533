"""Recursive-descent parser for the dynamics expression language.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom (('^' | '**') integer)?
    atom   := number | 'x' digits | name '(' expr (',' expr)* ')' | '(' expr ')'

``pow(e, k)`` is accepted as a function-call spelling of ``e ^ k``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .ast import FUNCTIONS, BinOp, Call, Expr, Neg, Num, Pow, Var

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<num>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<name>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>\*\*|[-+*/^(),])"
    r")"
)
_VAR = re.compile(r"x([1-9]\d*)$")


class ParseError(ValueError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


@dataclass
class _Tok:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Tok]:
    toks, pos = [], 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            if text[pos:].strip() == "":
                break
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup
        if kind is None:  # trailing whitespace only
            break
        toks.append(_Tok(kind, m.group(kind), m.start(kind)))
        pos = m.end()
    toks.append(_Tok("end", "", len(text)))
    return toks


class _Parser:
    def __init__(self, text: str, n: int):
        self.toks = _tokenize(text)
        self.i = 0
        self.n = n

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def _accept(self, *ops: str) -> _Tok | None:
        t = self.cur
        if t.kind == "op" and t.text in ops:
            self.i += 1
            return t
        return None

    def _expect(self, op: str) -> None:
        if self._accept(op) is None:
            self._fail(f"expected {op!r}")

    def _fail(self, what: str):
        t = self.cur
        found = "end of input" if t.kind == "end" else repr(t.text)
        raise ParseError(f"{what}, found {found}", t.pos)

    def parse(self) -> Expr:
        e = self.expr()
        if self.cur.kind != "end":
            self._fail("unexpected token")
        return e

    def expr(self) -> Expr:
        e = self.term()
        while (t := self._accept("+", "-")) is not None:
            e = BinOp(t.text, e, self.term())
        return e

    def term(self) -> Expr:
        e = self.unary()
        while (t := self._accept("*", "/")) is not None:
            e = BinOp(t.text, e, self.unary())
        return e

    def unary(self) -> Expr:
        if self._accept("-") is not None:
            return Neg(self.unary())
        if self._accept("+") is not None:
            return self.unary()
        return self.power()

    def power(self) -> Expr:
        base = self.atom()
        if self._accept("^", "**") is not None:
            return Pow(base, self.integer())
        return base

    def integer(self) -> int:
        sign = -1 if self._accept("-") is not None else 1
        t = self.cur
        if t.kind != "num" or not t.text.isdigit():
            self._fail("expected an integer exponent")
        self.i += 1
        return sign * int(t.text)

    def atom(self) -> Expr:
        t = self.cur
        if t.kind == "num":
            self.i += 1
            return Num(float(t.text))
        if t.kind == "name":
            self.i += 1
            m = _VAR.match(t.text)
            if m:
                idx = int(m.group(1))
                if idx > self.n:
                    raise ParseError(f"variable {t.text} out of range for n={self.n}", t.pos)
                return Var(idx)
            if t.text == "pow":
                self._expect("(")
                base = self.expr()
                self._expect(",")
                k = self.integer()
                self._expect(")")
                return Pow(base, k)
            if t.text not in FUNCTIONS:
                raise ParseError(f"unknown identifier {t.text!r}", t.pos)
            self._expect("(")
            args = [self.expr()]
            while self._accept(",") is not None:
                args.append(self.expr())
            self._expect(")")
            if len(args) != FUNCTIONS[t.text]:
                raise ParseError(
                    f"{t.text} takes {FUNCTIONS[t.text]} argument(s), got {len(args)}", t.pos
                )
            return Call(t.text, tuple(args))
        if self._accept("(") is not None:
            e = self.expr()
            self._expect(")")
            return e
        self._fail("expected a number, variable, function or '('")


def parse(text: str, n: int) -> Expr:
    """Parse ``text`` into an expression over variables ``x1 .. xn``."""
    if n < 1:
        raise ValueError("dimension must be >= 1")
    if not text or not text.strip():
        raise ParseError("empty expression", 0)
    return _Parser(text, n).parse()
