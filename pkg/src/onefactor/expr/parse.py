"""Recursive-descent parser for coefficient expressions.

Grammar::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | power
    power   := primary ('^' unary)?          # right-associative
    primary := NUMBER | IDENT | IDENT '(' expr (',' expr)* ')' | '(' expr ')'

Identifiers are the variables ``x``, ``t``, ``S`` or names from the
``constants`` mapping, which are inlined as literals.
"""

from __future__ import annotations

import re
from typing import Mapping

from .nodes import FUNCTIONS, VARIABLES, BinOp, Call, Const, Expr, ExprError, Neg, Var

DEFAULT_CONSTANTS = {"pi": 3.141592653589793}

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)


class ParseError(ExprError, ValueError):
    def __init__(self, message: str, offset: int, text: str = ""):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset
        self.text = text


class UnknownIdentifierError(ParseError):
    pass


class UnknownFunctionError(ParseError):
    pass


def _tokenize(text: str):
    pos = 0
    tokens = []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            offset = pos + len(text[pos:]) - len(text[pos:].lstrip())
            raise ParseError(f"unexpected character {text[offset]!r}", offset, text)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, constants: Mapping[str, float]):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0
        self.constants = constants

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.advance()
        if val != value or kind != "op":
            found = "end of input" if kind == "end" else repr(val)
            raise ParseError(f"expected {value!r}, found {found}", off, self.text)

    def error(self, message: str):
        raise ParseError(message, self.peek()[2], self.text)

    def parse(self) -> Expr:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ParseError(f"unexpected token {val!r}", off, self.text)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expr:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.advance()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expr:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.advance()
            arg = self.unary()
            # negative literals are stored as constants so printing round-trips
            return Const(-arg.value) if isinstance(arg, Const) else Neg(arg)
        return self.power()

    def power(self) -> Expr:
        base = self.primary()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            self.advance()
            return BinOp("^", base, self.unary())
        return base

    def primary(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Const(float(val))
        if kind == "id":
            if self.peek()[0] == "op" and self.peek()[1] == "(":
                if val not in FUNCTIONS:
                    raise UnknownFunctionError(f"unknown function {val!r}", off, self.text)
                self.advance()
                args = [self.expr()]
                while self.peek()[1] == ",":
                    self.advance()
                    args.append(self.expr())
                self.expect(")")
                if len(args) != FUNCTIONS[val]:
                    raise ParseError(
                        f"{val} takes {FUNCTIONS[val]} argument(s), got {len(args)}", off, self.text
                    )
                return Call(val, tuple(args))
            if val in VARIABLES:
                return Var(val)
            if val in self.constants:
                return Const(float(self.constants[val]))
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off, self.text)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        found = "end of input" if kind == "end" else repr(val)
        raise ParseError(f"unexpected {found}", off, self.text)


def parse(text: str, constants: Mapping[str, float] | None = None) -> Expr:
    """Parse ``text`` into an expression tree.

    Declared ``constants`` are substituted as literals; ``pi`` is always known.
    """
    table = dict(DEFAULT_CONSTANTS)
    if constants:
        table.update(constants)
    return _Parser(text, table).parse()
