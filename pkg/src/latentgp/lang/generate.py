"""Random generation of type-correct, depth-bounded GPTL programs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ast import Compare, Const, Field, Indicator, Logical, Node, Not, Strategy
from .tokens import PRICE_FIELDS, RELOPS

MUTATION_OPS = ("subtree_replace", "operator_mutate", "terminal_mutate", "insert", "delete")

# Periods the generator draws from: the integer entries of the constant table.
GEN_PERIODS = (2, 5, 10, 14, 20, 25, 30, 50, 70, 75, 80, 100, 150, 200)
RSI_LEVELS = ("20", "25", "30", "50", "70", "75", "80")
STD_LEVELS = ("0.5", "1.0", "1.5", "2.0", "5", "10")
PRICE_INDICATORS = ("SMA", "EMA", "MAX", "MIN")
# Comparison families and their sampling weights. The grammar admits any
# Numeric-vs-Numeric comparison; sampling within a family keeps generated
# rules on a common scale so they actually trade.
FAMILIES = (("price", 0.5), ("rsi", 0.25), ("std", 0.15), ("volume", 0.1))


@dataclass(frozen=True)
class MutationConfig:
    max_depth: int = 8
    min_depth: int = 2
    op_weights: dict = field(default_factory=lambda: {op: 1.0 for op in MUTATION_OPS})
    rng_seed: int = 0
    max_tokens: int = 94
    p_logical: float = 0.35
    p_not: float = 0.1

    def __post_init__(self):
        if not (self.max_depth >= self.min_depth >= 1):
            raise ValueError("need max_depth >= min_depth >= 1")
        if self.max_depth < 2:
            raise ValueError("a comparison needs depth 2")
        if set(self.op_weights) - set(MUTATION_OPS):
            raise ValueError(f"unknown mutation ops: {set(self.op_weights) - set(MUTATION_OPS)}")
        w = list(self.op_weights.values())
        if any(x < 0 for x in w) or sum(w) <= 0:
            raise ValueError("op_weights must be nonnegative with a positive sum")
        if self.max_tokens < 5:
            raise ValueError("max_tokens too small for any comparison")

    def op_probabilities(self) -> tuple[tuple[str, ...], np.ndarray]:
        ops = tuple(op for op in MUTATION_OPS if op in self.op_weights)
        w = np.array([self.op_weights[op] for op in ops], dtype=float)
        return ops, w / w.sum()


def _choice(rng: np.random.Generator, seq):
    return seq[int(rng.integers(len(seq)))]


def random_price_operand(rng: np.random.Generator, depth_budget: int) -> Node:
    f = Field(_choice(rng, PRICE_FIELDS))
    if depth_budget >= 2 and rng.random() < 0.7:
        return Indicator(_choice(rng, PRICE_INDICATORS), f, _choice(rng, GEN_PERIODS))
    return f


def random_compare(rng: np.random.Generator, depth_budget: int) -> Compare:
    """A comparison whose depth is at most ``depth_budget`` (>= 2)."""
    names = [n for n, _ in FAMILIES]
    w = np.array([p for _, p in FAMILIES])
    if depth_budget < 3:
        # No room for an indicator call: field-vs-field price comparisons only.
        family = "price"
    else:
        family = names[int(rng.choice(len(names), p=w / w.sum()))]
    op = _choice(rng, RELOPS[:4])  # EQ on continuous series almost never fires
    if family == "price":
        operand_budget = depth_budget - 1
        for _ in range(16):
            left = random_price_operand(rng, operand_budget)
            right = random_price_operand(rng, operand_budget)
            if left != right:
                break
        return Compare(op, left, right)
    if family == "rsi":
        ind = Indicator("RSI", Field("close"), _choice(rng, GEN_PERIODS[1:]))
        return Compare(op, ind, Const(_choice(rng, RSI_LEVELS)))
    if family == "std":
        ind = Indicator("STD", Field("close"), _choice(rng, GEN_PERIODS[1:]))
        return Compare(op, ind, Const(_choice(rng, STD_LEVELS)))
    ind = Indicator(_choice(rng, ("SMA", "EMA", "MAX")), Field("volume"), _choice(rng, GEN_PERIODS[1:]))
    return Compare(op, Field("volume"), ind)


def random_numeric(rng: np.random.Generator, depth_budget: int) -> Node:
    """A Numeric operand for an arbitrary comparison slot."""
    r = rng.random()
    if r < 0.2:
        return Const(_choice(rng, RSI_LEVELS + STD_LEVELS))
    return random_price_operand(rng, depth_budget)


def random_boolean(
    rng: np.random.Generator,
    depth_budget: int,
    min_depth: int = 2,
    p_logical: float = 0.35,
    p_not: float = 0.1,
) -> Node:
    """Grow a Boolean tree with depth in [min_depth, depth_budget]."""
    need_logical = min_depth > 3
    if need_logical or (depth_budget >= 3 and rng.random() < p_logical):
        if depth_budget >= 3 and rng.random() < p_not:
            return Not(random_boolean(rng, depth_budget - 1, min_depth - 1, p_logical * 0.5, p_not))
        deep_side = int(rng.integers(2))
        kids = []
        for side in range(2):
            need = min_depth - 1 if side == deep_side else 2
            kids.append(random_boolean(rng, depth_budget - 1, need, p_logical * 0.5, p_not))
        return Logical(_choice(rng, ("&", "|")), kids[0], kids[1])
    cmp = random_compare(rng, depth_budget)
    while cmp.depth < min_depth:
        cmp = random_compare(rng, depth_budget)
    return cmp


def random_signal(cfg: MutationConfig, rng: np.random.Generator) -> Node:
    while True:
        sig = random_boolean(rng, cfg.max_depth, cfg.min_depth, cfg.p_logical, cfg.p_not)
        if len(sig.tokens()) <= cfg.max_tokens:
            return sig


def random_strategy(cfg: MutationConfig, rng: np.random.Generator | None = None) -> Strategy:
    """Four independently sampled signals. ``rng`` defaults to one seeded by ``cfg.rng_seed``."""
    if rng is None:
        rng = np.random.default_rng(cfg.rng_seed)
    return Strategy(*(random_signal(cfg, rng) for _ in range(4)))
