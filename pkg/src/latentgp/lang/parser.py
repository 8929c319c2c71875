"""Recursive-descent parser for GPTL signal expressions.

Precedence is NOT > AND > OR, with comparisons binding tighter than any
logical operator. Operands are parsed without regard to type and checked
afterwards so that ``(close & 5)`` is reported as a type error rather than
a syntax error.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence

from ..errors import DepthError, GptlSyntaxError, GptlTypeError
from .ast import (
    SIGNALS, Compare, Const, Field, Indicator, Logical, Node, Not, Strategy,
    Type, to_text, typecheck,
)
from .tokens import MAX_PERIOD, MIN_PERIOD, Token, TokenKind, lex

DEFAULT_MAX_DEPTH = 8

_RELOP_KINDS = {
    TokenKind.GT: ">", TokenKind.LT: "<", TokenKind.GE: ">=",
    TokenKind.LE_OP: "<=", TokenKind.EQ: "==",
}


class _Parser:
    def __init__(self, tokens: Sequence[Token]):
        self.toks = list(tokens)
        self.i = 0

    def peek(self) -> Token | None:
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, kind: TokenKind | None = None) -> Token:
        tok = self.peek()
        if tok is None:
            raise GptlSyntaxError("unexpected end of input")
        if kind is not None and tok.kind is not kind:
            raise GptlSyntaxError(f"expected {kind.value!r}, got {tok.text!r}")
        self.i += 1
        return tok

    def parse(self) -> Node:
        node = self.or_expr()
        if self.peek() is not None:
            raise GptlSyntaxError(f"trailing input at {self.peek().text!r}")
        return node

    def or_expr(self) -> Node:
        node = self.and_expr()
        while self.peek() is not None and self.peek().kind is TokenKind.OR:
            self.take()
            node = Logical("|", node, self.and_expr())
        return node

    def and_expr(self) -> Node:
        node = self.unary()
        while self.peek() is not None and self.peek().kind is TokenKind.AND:
            self.take()
            node = Logical("&", node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.NOT:
            self.take()
            return Not(self.unary())
        return self.comparison()

    def comparison(self) -> Node:
        left = self.atom()
        tok = self.peek()
        if tok is not None and tok.kind in _RELOP_KINDS:
            self.take()
            right = self.atom()
            nxt = self.peek()
            if nxt is not None and nxt.kind in _RELOP_KINDS:
                raise GptlSyntaxError("chained comparisons are not part of the grammar")
            return Compare(_RELOP_KINDS[tok.kind], left, right)
        return left

    def atom(self) -> Node:
        tok = self.take()
        if tok.kind is TokenKind.LPAREN:
            node = self.or_expr()
            self.take(TokenKind.RPAREN)
            return node
        if tok.kind is TokenKind.FIELD:
            return Field(tok.value)
        if tok.kind is TokenKind.NUM:
            return Const(tok.value)
        if tok.kind is TokenKind.INDICATOR:
            self.take(TokenKind.LPAREN)
            arg = self.take()
            if arg.kind is not TokenKind.FIELD:
                raise GptlSyntaxError(f"{tok.value} expects a field argument, got {arg.text!r}")
            self.take(TokenKind.COMMA)
            period_tok = self.take(TokenKind.NUM)
            if "." in period_tok.value:
                raise GptlSyntaxError(f"period must be an integer, got {period_tok.value}")
            period = int(period_tok.value)
            if not (MIN_PERIOD <= period <= MAX_PERIOD):
                raise GptlSyntaxError(f"period {period} outside [{MIN_PERIOD}, {MAX_PERIOD}]")
            self.take(TokenKind.RPAREN)
            return Indicator(tok.value, Field(arg.value), period)
        raise GptlSyntaxError(f"unexpected token {tok.text!r}")


def parse_tokens(tokens: Sequence[Token], max_depth: int = DEFAULT_MAX_DEPTH) -> Node:
    """Parse a token sequence (without SOS/EOS framing) into a Boolean signal."""
    node = _Parser(tokens).parse()
    if typecheck(node) is not Type.BOOLEAN:
        raise GptlTypeError("a signal must be a Boolean expression")
    if node.depth > max_depth:
        raise DepthError(f"depth {node.depth} exceeds maximum {max_depth}")
    return node


def parse(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> Node:
    """Parse one signal expression from program text."""
    return parse_tokens(lex(text), max_depth=max_depth)


def canonicalize(text: str, max_depth: int = DEFAULT_MAX_DEPTH) -> str:
    return to_text(parse(text, max_depth=max_depth))


def parse_strategy(source: str | Mapping[str, str], max_depth: int = DEFAULT_MAX_DEPTH) -> Strategy:
    """Parse a strategy from a ``{"le", "se", "lx", "sx"}`` mapping or its JSON text."""
    if isinstance(source, str):
        try:
            source = json.loads(source)
        except json.JSONDecodeError as exc:
            raise GptlSyntaxError(f"strategy is not valid JSON: {exc}") from None
    if not isinstance(source, Mapping) or set(source) != set(SIGNALS):
        raise GptlSyntaxError(f"strategy must have exactly the keys {SIGNALS}")
    return Strategy(*(parse(source[name], max_depth=max_depth) for name in SIGNALS))
