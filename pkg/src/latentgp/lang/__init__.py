"""GPTL: the typed trading-strategy language (four Boolean signals)."""

from .ast import (
    SIGNALS, Compare, Const, Field, Indicator, Logical, Node, Not, Strategy,
    Type, serialize, to_text, typecheck,
)
from .distance import ast_edit_distance, levenshtein, token_edit_distance
from .generate import MUTATION_OPS, MutationConfig, random_signal, random_strategy
from .mutate import mutate_discrete, mutate_signal
from .parser import canonicalize, parse, parse_strategy, parse_tokens
from .tokens import Token, TokenKind, lex, vocab_hash, vocabulary

__all__ = [
    "SIGNALS", "Compare", "Const", "Field", "Indicator", "Logical", "Node", "Not",
    "Strategy", "Type", "serialize", "to_text", "typecheck", "ast_edit_distance",
    "levenshtein", "token_edit_distance", "MUTATION_OPS", "MutationConfig",
    "random_signal", "random_strategy", "mutate_discrete", "mutate_signal",
    "canonicalize", "parse", "parse_strategy", "parse_tokens", "Token",
    "TokenKind", "lex", "vocab_hash", "vocabulary",
]
