from __future__ import annotations

from collections.abc import Sequence

from .ast import Strategy


def levenshtein(a: Sequence, b: Sequence) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def token_edit_distance(a: Sequence, b: Sequence) -> float:
    """Levenshtein distance normalized by the longer sequence; 0 for two empties."""
    n = max(len(a), len(b))
    if n == 0:
        return 0.0
    return levenshtein(a, b) / n


def ast_edit_distance(a: Strategy, b: Strategy) -> float:
    """Mean per-signal normalized token distance between canonical serializations."""
    return sum(
        token_edit_distance(x.tokens(), y.tokens()) for x, y in zip(a.signals, b.signals)
    ) / 4.0
