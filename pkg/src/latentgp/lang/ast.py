"""Typed AST for GPTL signals and strategies, plus canonical serialization."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Union

from ..errors import GptlTypeError
from .tokens import (
    EOS, FIELDS, INDICATORS, LOGICAL_OPS, MAX_PERIOD, MIN_PERIOD, RELOPS, SOS,
    Token, TokenKind, num, symbol,
)

SIGNALS = ("le", "se", "lx", "sx")


class Type(enum.Enum):
    NUMERIC = "Numeric"
    BOOLEAN = "Boolean"


class Node:
    """Common behaviour of AST nodes. Subclasses are frozen dataclasses."""

    type: Type

    @property
    def children(self) -> tuple["Node", ...]:
        return ()

    @cached_property
    def depth(self) -> int:
        return 1 + max((c.depth for c in self.children), default=0)

    def walk(self, path: tuple[int, ...] = ()) -> Iterator[tuple[tuple[int, ...], "Node"]]:
        """Pre-order traversal yielding (path, node)."""
        yield path, self
        for i, c in enumerate(self.children):
            yield from c.walk(path + (i,))

    def tokens(self) -> list[Token]:
        out: list[Token] = []
        _emit(self, out)
        return out

    def __str__(self) -> str:
        return to_text(self)


@dataclass(frozen=True)
class Field(Node):
    name: str
    type = Type.NUMERIC


@dataclass(frozen=True)
class Const(Node):
    text: str
    type = Type.NUMERIC

    @property
    def value(self) -> float:
        return float(self.text)


@dataclass(frozen=True)
class Indicator(Node):
    name: str
    field: Field
    period: int
    type = Type.NUMERIC

    @property
    def children(self):
        return (self.field,)


@dataclass(frozen=True)
class Compare(Node):
    op: str
    left: Node
    right: Node
    type = Type.BOOLEAN

    @property
    def children(self):
        return (self.left, self.right)


@dataclass(frozen=True)
class Not(Node):
    operand: Node
    type = Type.BOOLEAN

    @property
    def children(self):
        return (self.operand,)


@dataclass(frozen=True)
class Logical(Node):
    op: str
    left: Node
    right: Node
    type = Type.BOOLEAN

    @property
    def children(self):
        return (self.left, self.right)


Numeric = Union[Field, Const, Indicator]
Boolean = Union[Compare, Not, Logical]


def with_children(node: Node, children: tuple[Node, ...]) -> Node:
    if isinstance(node, Indicator):
        (f,) = children
        return Indicator(node.name, f, node.period)
    if isinstance(node, Compare):
        return Compare(node.op, *children)
    if isinstance(node, Logical):
        return Logical(node.op, *children)
    if isinstance(node, Not):
        return Not(*children)
    return node


def get_at(node: Node, path: tuple[int, ...]) -> Node:
    for i in path:
        node = node.children[i]
    return node


def replace_at(node: Node, path: tuple[int, ...], new: Node) -> Node:
    if not path:
        return new
    kids = list(node.children)
    kids[path[0]] = replace_at(kids[path[0]], path[1:], new)
    return with_children(node, tuple(kids))


def typecheck(node: Node) -> Type:
    """Check typing rules bottom-up and return the node's static type."""
    if isinstance(node, Field):
        if node.name not in FIELDS:
            raise GptlTypeError(f"unknown field {node.name!r}")
        return Type.NUMERIC
    if isinstance(node, Const):
        num(node.text)
        return Type.NUMERIC
    if isinstance(node, Indicator):
        if node.name not in INDICATORS:
            raise GptlTypeError(f"unknown indicator {node.name!r}")
        if not isinstance(node.field, Field):
            raise GptlTypeError(f"{node.name} expects a price field argument")
        typecheck(node.field)
        if not (MIN_PERIOD <= node.period <= MAX_PERIOD):
            raise GptlTypeError(f"period {node.period} outside [{MIN_PERIOD}, {MAX_PERIOD}]")
        return Type.NUMERIC
    if isinstance(node, Compare):
        if node.op not in RELOPS:
            raise GptlTypeError(f"unknown relational operator {node.op!r}")
        for side in (node.left, node.right):
            if typecheck(side) is not Type.NUMERIC:
                raise GptlTypeError(f"'{node.op}' requires Numeric operands, got Boolean")
        return Type.BOOLEAN
    if isinstance(node, (Logical, Not)):
        if isinstance(node, Logical) and node.op not in LOGICAL_OPS:
            raise GptlTypeError(f"unknown logical operator {node.op!r}")
        for c in node.children:
            if typecheck(c) is not Type.BOOLEAN:
                op = node.op if isinstance(node, Logical) else "~"
                raise GptlTypeError(f"'{op}' requires Boolean operands, got Numeric")
        return Type.BOOLEAN
    raise GptlTypeError(f"not a GPTL node: {node!r}")


# -- serialization --------------------------------------------------------

def _emit(node: Node, out: list[Token]) -> None:
    if isinstance(node, Field):
        out.append(Token(TokenKind.FIELD, node.name))
    elif isinstance(node, Const):
        out.append(num(node.text))
    elif isinstance(node, Indicator):
        out += [Token(TokenKind.INDICATOR, node.name), symbol("("),
                Token(TokenKind.FIELD, node.field.name), symbol(","),
                num(str(node.period)), symbol(")")]
    elif isinstance(node, Not):
        out += [symbol("("), symbol("~")]
        _emit(node.operand, out)
        out.append(symbol(")"))
    else:
        out.append(symbol("("))
        _emit(node.left, out)
        out.append(symbol(node.op))
        _emit(node.right, out)
        out.append(symbol(")"))


def to_text(node: Node) -> str:
    if isinstance(node, Field):
        return node.name
    if isinstance(node, Const):
        return node.text
    if isinstance(node, Indicator):
        return f"{node.name}({node.field.name}, {node.period})"
    if isinstance(node, Not):
        return f"(~{to_text(node.operand)})"
    return f"({to_text(node.left)} {node.op} {to_text(node.right)})"


def serialize(node: Node, framed: bool = False) -> tuple[list[Token], str]:
    """Canonical token sequence and text. ``framed`` adds SOS/EOS (model mode)."""
    toks = node.tokens()
    if framed:
        toks = [SOS] + toks + [EOS]
    return toks, to_text(node)


@dataclass(frozen=True)
class Strategy:
    le: Node
    se: Node
    lx: Node
    sx: Node

    @property
    def signals(self) -> tuple[Node, Node, Node, Node]:
        return (self.le, self.se, self.lx, self.sx)

    def replace(self, index: int, signal: Node) -> "Strategy":
        sigs = list(self.signals)
        sigs[index] = signal
        return Strategy(*sigs)

    def to_dict(self) -> dict[str, str]:
        return {name: to_text(sig) for name, sig in zip(SIGNALS, self.signals)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def __str__(self) -> str:
        return self.to_json()
