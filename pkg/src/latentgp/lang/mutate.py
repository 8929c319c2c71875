"""Type-preserving discrete mutation over GPTL strategies.

Each call edits exactly one of the four signals. An operator that has no
applicable site, or whose result would break the depth/length bounds or
leave the signal unchanged, falls back to terminal mutation, which always
exists (every signal contains at least one comparison leaf) and never
changes tree shape.
"""

from __future__ import annotations

import numpy as np

from .ast import (
    Compare, Const, Field, Indicator, Logical, Node, Not, Strategy, Type,
    get_at, replace_at,
)
from .generate import (
    GEN_PERIODS, MutationConfig, _choice, random_boolean, random_numeric,
)
from .tokens import CONSTANTS, FIELDS, INDICATORS, LOGICAL_OPS, RELOPS


def _level(path: tuple[int, ...]) -> int:
    return len(path) + 1


def _fits(sig: Node, cfg: MutationConfig) -> bool:
    return cfg.min_depth <= sig.depth <= cfg.max_depth and len(sig.tokens()) <= cfg.max_tokens


def _operand_paths(sig: Node):
    """Numeric nodes that sit directly under a comparison."""
    for path, node in sig.walk():
        if isinstance(node, Compare):
            yield path + (0,)
            yield path + (1,)


def subtree_replace(sig: Node, cfg: MutationConfig, rng: np.random.Generator) -> Node | None:
    sites = [p for p, n in sig.walk() if n.type is Type.BOOLEAN] + list(_operand_paths(sig))
    path = sites[int(rng.integers(len(sites)))]
    node = get_at(sig, path)
    budget = cfg.max_depth - _level(path) + 1
    if node.type is Type.BOOLEAN:
        need = cfg.min_depth if not path else 2
        if budget < max(need, 2):
            return None
        new = random_boolean(rng, budget, need, cfg.p_logical, cfg.p_not)
    else:
        new = random_numeric(rng, budget)
    return replace_at(sig, path, new)


def operator_mutate(sig: Node, cfg: MutationConfig, rng: np.random.Generator) -> Node | None:
    sites = [(p, n) for p, n in sig.walk() if isinstance(n, (Compare, Logical))]
    path, node = sites[int(rng.integers(len(sites)))]
    if isinstance(node, Compare):
        new = Compare(_choice(rng, [o for o in RELOPS if o != node.op]), node.left, node.right)
    else:
        new = Logical(_choice(rng, [o for o in LOGICAL_OPS if o != node.op]), node.left, node.right)
    return replace_at(sig, path, new)


def terminal_mutate(sig: Node, cfg: MutationConfig, rng: np.random.Generator) -> Node:
    """Resample one field, constant, indicator name or period; shape is preserved."""
    sites = [(p, n) for p, n in sig.walk() if isinstance(n, (Field, Const, Indicator))]
    path, node = sites[int(rng.integers(len(sites)))]
    if isinstance(node, Field):
        new = Field(_choice(rng, [f for f in FIELDS if f != node.name]))
    elif isinstance(node, Const):
        new = Const(_choice(rng, [c for c in CONSTANTS if c != node.text]))
    elif rng.random() < 0.5:
        new = Indicator(node.name, node.field, _choice(rng, [p for p in GEN_PERIODS if p != node.period]))
    else:
        new = Indicator(_choice(rng, [i for i in INDICATORS if i != node.name]), node.field, node.period)
    return replace_at(sig, path, new)


def insert(sig: Node, cfg: MutationConfig, rng: np.random.Generator) -> Node | None:
    bool_sites = [p for p, n in sig.walk() if n.type is Type.BOOLEAN]
    field_sites = [p for p in _operand_paths(sig) if isinstance(get_at(sig, p), Field)]
    if field_sites and rng.random() < 0.3:
        path = field_sites[int(rng.integers(len(field_sites)))]
        f = get_at(sig, path)
        return replace_at(sig, path, Indicator(_choice(rng, INDICATORS), f, _choice(rng, GEN_PERIODS)))
    path = bool_sites[int(rng.integers(len(bool_sites)))]
    node = get_at(sig, path)
    budget = cfg.max_depth - _level(path)
    if budget < 2:
        return None
    if not isinstance(node, Not) and rng.random() < 0.2:
        return replace_at(sig, path, Not(node))
    other = random_boolean(rng, budget, 2, cfg.p_logical * 0.5, cfg.p_not)
    op = _choice(rng, LOGICAL_OPS)
    pair = (node, other) if rng.random() < 0.5 else (other, node)
    return replace_at(sig, path, Logical(op, *pair))


def delete(sig: Node, cfg: MutationConfig, rng: np.random.Generator) -> Node | None:
    """Collapse a logical node onto a child, or an indicator onto its field."""
    candidates: list[tuple[tuple[int, ...], Node]] = []
    for path, node in sig.walk():
        if isinstance(node, Logical):
            candidates += [(path, node.left), (path, node.right)]
        elif isinstance(node, Not):
            candidates.append((path, node.operand))
    for path in _operand_paths(sig):
        node = get_at(sig, path)
        if isinstance(node, Indicator):
            candidates.append((path, node.field))
    order = rng.permutation(len(candidates))
    for i in order:
        path, repl = candidates[int(i)]
        out = replace_at(sig, path, repl)
        if _fits(out, cfg):
            return out
    return None


OPERATORS = {
    "subtree_replace": subtree_replace,
    "operator_mutate": operator_mutate,
    "terminal_mutate": terminal_mutate,
    "insert": insert,
    "delete": delete,
}


def mutate_signal(sig: Node, cfg: MutationConfig, rng: np.random.Generator, op: str | None = None) -> tuple[Node, str]:
    """Apply one operator to a signal; returns (new signal, operator actually used)."""
    if op is None:
        ops, p = cfg.op_probabilities()
        op = ops[int(rng.choice(len(ops), p=p))]
    if op != "terminal_mutate":
        out = OPERATORS[op](sig, cfg, rng)
        if out is not None and out != sig and _fits(out, cfg):
            return out, op
    return terminal_mutate(sig, cfg, rng), "terminal_mutate"


def mutate_discrete(s: Strategy, cfg: MutationConfig, rng: np.random.Generator) -> Strategy:
    k = int(rng.integers(4))
    new, _ = mutate_signal(s.signals[k], cfg, rng)
    return s.replace(k, new)
