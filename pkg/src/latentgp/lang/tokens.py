"""Closed GPTL vocabulary and the lexer for program text."""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache

from ..errors import GptlSyntaxError

FIELDS = ("open", "high", "low", "close", "volume")
PRICE_FIELDS = ("open", "high", "low", "close")
INDICATORS = ("SMA", "EMA", "RSI", "MAX", "MIN", "STD")

MIN_PERIOD = 2
MAX_PERIOD = 200

# Discretized constants usable as comparison operands.
CONSTANTS = (
    "0", "1", "2", "5", "10", "14", "20", "25", "30", "50", "70", "75",
    "80", "100", "150", "200",
    "0.5", "0.9", "1.0", "1.1", "1.5", "2.0",
)
# Integer literals that may appear as indicator periods. Only the table
# integers are produced by the generator; the rest exist so any period in
# [MIN_PERIOD, MAX_PERIOD] stays tokenizable.
NUM_TABLE = CONSTANTS + tuple(
    str(p) for p in range(MIN_PERIOD, MAX_PERIOD + 1) if str(p) not in CONSTANTS
)
_NUM_INDEX = {text: i for i, text in enumerate(NUM_TABLE)}

RELOPS = (">", "<", ">=", "<=", "==")
LOGICAL_OPS = ("&", "|")


class TokenKind(enum.Enum):
    PAD = "<PAD>"
    SOS = "<SOS>"
    EOS = "<EOS>"
    UNK = "<UNK>"
    AND = "&"
    OR = "|"
    NOT = "~"
    GT = ">"
    LT = "<"
    GE = ">="
    LE_OP = "<="
    EQ = "=="
    LPAREN = "("
    RPAREN = ")"
    COMMA = ","
    FIELD = "FIELD"
    INDICATOR = "INDICATOR"
    NUM = "NUM"


_SYMBOL_KINDS = {
    k.value: k
    for k in (
        TokenKind.AND, TokenKind.OR, TokenKind.NOT, TokenKind.GT, TokenKind.LT,
        TokenKind.GE, TokenKind.LE_OP, TokenKind.EQ, TokenKind.LPAREN,
        TokenKind.RPAREN, TokenKind.COMMA,
    )
}


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: str | None = None

    @property
    def num_id(self) -> int:
        """Index of a NUM token in the fixed numeric table."""
        if self.kind is not TokenKind.NUM:
            raise ValueError(f"{self} is not a NUM token")
        return _NUM_INDEX[self.value]

    @property
    def text(self) -> str:
        """Surface form as written in program text."""
        if self.kind in (TokenKind.FIELD, TokenKind.INDICATOR, TokenKind.NUM):
            return self.value
        return self.kind.value

    def __str__(self) -> str:
        if self.kind is TokenKind.NUM:
            return f"<NUM:{self.value}>"
        return self.text


PAD = Token(TokenKind.PAD)
SOS = Token(TokenKind.SOS)
EOS = Token(TokenKind.EOS)
UNK = Token(TokenKind.UNK)


def num(text: str) -> Token:
    if text not in _NUM_INDEX:
        raise GptlSyntaxError(f"numeric literal {text!r} is not in the constant table")
    return Token(TokenKind.NUM, text)


def symbol(sym: str) -> Token:
    return Token(_SYMBOL_KINDS[sym])


@lru_cache(maxsize=1)
def vocabulary() -> tuple[Token, ...]:
    """The full, ordered token vocabulary. Index = model token id."""
    toks = [PAD, SOS, EOS, UNK]
    toks += [Token(k) for k in _SYMBOL_KINDS.values()]
    toks += [Token(TokenKind.FIELD, f) for f in FIELDS]
    toks += [Token(TokenKind.INDICATOR, name) for name in INDICATORS]
    toks += [Token(TokenKind.NUM, t) for t in NUM_TABLE]
    return tuple(toks)


def vocab_hash() -> str:
    joined = "\n".join(str(t) for t in vocabulary())
    return hashlib.sha256(joined.encode()).hexdigest()


_LEX_RE = re.compile(
    r"\s*(?:(<NUM:[^>]*>)|(>=|<=|==|[><&|~(),])|([A-Za-z_][A-Za-z_0-9]*)|(\d+(?:\.\d+)?))"
)


def _lexeme(tagged, sym, word, number) -> Token:
    if tagged is not None:
        return num(tagged[5:-1])
    if sym is not None:
        return symbol(sym)
    if word is not None:
        if word in FIELDS:
            return Token(TokenKind.FIELD, word)
        if word in INDICATORS:
            return Token(TokenKind.INDICATOR, word)
        raise GptlSyntaxError(f"unknown identifier {word!r}")
    return num(number)


# lexeme text -> token; only valid lexemes are stored, so it stays vocabulary-sized
_LEXEME_CACHE: dict[str, Token] = {}


def lex(text: str) -> list[Token]:
    """Split program text into tokens. Accepts both ``20`` and ``<NUM:20>``."""
    out: list[Token] = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _LEX_RE.match(text, pos)
        if m is None or m.end() == pos:
            raise GptlSyntaxError(f"unexpected character {text[pos]!r} at offset {pos}")
        key = m.group(0).lstrip()
        tok = _LEXEME_CACHE.get(key)
        if tok is None:
            tok = _LEXEME_CACHE[key] = _lexeme(*m.groups())
        out.append(tok)
        pos = m.end()
    return out
