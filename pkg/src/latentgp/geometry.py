"""Latent behavioral-geometry diagnostics.

* :func:`perturb_sweep` adds isotropic noise of growing scale to strategy
  latents and measures decode success, structural drift and behavioral
  drift (the latent trust region).
* :func:`block_perturb_test` perturbs one signal block at a time and
  measures where the decoded change lands (disentanglement).
* :func:`swap_test` transplants blocks between two strategies.

Every cell draws its noise from an RNG keyed by its coordinates, so the
reports do not depend on evaluation order.
"""

from __future__ import annotations

import csv
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backtest import BacktestConfig, BacktestResult, action_divergence, simulate
from .embed.codec import DecodeFailure, decode_batch, decode_tokens, encode_many
from .embed.model import ProgramVAE
from .embed.tokenizer import EOS_ID
from .errors import NoBars
from .lang.ast import SIGNALS, Strategy
from .lang.distance import ast_edit_distance, token_edit_distance
from .market import MarketSeries

DEFAULT_EPSILONS = (0.01, 0.05, 0.1, 0.5, 1.0, 1.5, 2.5, 3.0, 3.5, 5.0)


@dataclass(frozen=True)
class SweepConfig:
    epsilons: tuple[float, ...] = DEFAULT_EPSILONS
    n_strategies: int = 50
    n_perturbations_per: int = 4
    seed: int = 0
    success_threshold: float = 0.9
    divergence_threshold: float = 0.1

    def __post_init__(self):
        eps = tuple(float(e) for e in self.epsilons)
        object.__setattr__(self, "epsilons", eps)
        if not eps or any(e < 0 for e in eps) or any(b <= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be non-negative and strictly ascending")
        if self.n_strategies < 1 or self.n_perturbations_per < 1:
            raise ValueError("n_strategies and n_perturbations_per must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["epsilons"] = list(self.epsilons)
        return d


@dataclass
class CellOutcome:
    strategy: int
    eps_index: int
    epsilon: float
    repeat: int
    success: bool
    structural: float | None
    divergence: float | None
    reason: str | None = None


@dataclass
class LocalityReport:
    epsilons: list[float]
    decode_success_rate: list[float]
    mean_structural: list[float | None]
    mean_divergence: list[float | None]
    n_cells: list[int]
    trust_region_epsilon: float | None
    config: dict
    cells: list[CellOutcome] = field(default_factory=list)
    notes: str = "decode failures are excluded from the distance means and counted only in decode_success_rate"

    def rows(self) -> list[dict]:
        return [
            {"epsilon": e, "decode_success_rate": s, "mean_structural": d, "mean_divergence": v, "n_cells": n}
            for e, s, d, v, n in zip(self.epsilons, self.decode_success_rate, self.mean_structural,
                                     self.mean_divergence, self.n_cells)
        ]

    def to_dict(self, with_cells: bool = False) -> dict:
        out = {
            "per_epsilon": self.rows(),
            "trust_region_epsilon": self.trust_region_epsilon,
            "config": self.config,
            "notes": self.notes,
        }
        if with_cells:
            out["cells"] = [asdict(c) for c in self.cells]
        return out

    def to_csv(self, path: str | Path) -> None:
        _write_csv(path, self.rows())


@dataclass
class DisentanglementReport:
    matrix: np.ndarray          # [block, signal]
    cross_talk: float
    target_only_rate: float
    per_block_target_only: list[float]
    change_rate: float          # perturbations that changed at least one signal
    epsilon: float
    n_strategies: int

    def to_dict(self) -> dict:
        return {
            "matrix": self.matrix.tolist(),
            "blocks": list(SIGNALS),
            "signals": list(SIGNALS),
            "cross_talk": self.cross_talk,
            "target_only_rate": self.target_only_rate,
            "per_block_target_only": self.per_block_target_only,
            "change_rate": self.change_rate,
            "epsilon": self.epsilon,
            "n_strategies": self.n_strategies,
        }

    def rows(self) -> list[dict]:
        return [{"block": SIGNALS[k], **{SIGNALS[j]: float(self.matrix[k, j]) for j in range(4)}}
                for k in range(4)]

    def to_csv(self, path: str | Path) -> None:
        _write_csv(path, self.rows())


def _write_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if v is None else v) for k, v in r.items()})


def shared_divergence(a: BacktestResult, b: BacktestResult) -> float:
    """Action divergence over the bars both backtests evaluated."""
    start = max(a.start_index, b.start_index)
    end = min(a.end_index, b.end_index)
    if end <= start:
        return 0.0
    xa = a.actions[start - a.start_index:end - a.start_index]
    xb = b.actions[start - b.start_index:end - b.start_index]
    return action_divergence(xa, xb)


def _backtest(s: Strategy, series: MarketSeries, window, bt_cfg, cache: dict) -> BacktestResult | None:
    if s not in cache:
        try:
            cache[s] = simulate(s, series, window, bt_cfg)
        except NoBars:
            cache[s] = None
    return cache[s]


def _mean(xs: list[float]) -> float | None:
    return float(np.mean(xs)) if xs else None


def trust_region_epsilon(epsilons, success, divergence, min_success=0.9, max_divergence=0.1) -> float | None:
    """Largest epsilon with decode success >= ``min_success`` and divergence <= ``max_divergence``."""
    best = None
    for e, s, d in zip(epsilons, success, divergence):
        if s >= min_success and d is not None and d <= max_divergence:
            best = e
    return best


def perturb_sweep(
    model: ProgramVAE,
    strategies: Sequence[Strategy],
    cfg: SweepConfig,
    series: MarketSeries,
    window: tuple[int, int],
    bt_cfg: BacktestConfig | None = None,
) -> LocalityReport:
    """Isotropic perturbation sweep around the posterior means of ``strategies``.

    The reference for each strategy is the decode of its unperturbed latent,
    so epsilon = 0 measures pure decode noise.
    """
    strategies = list(strategies)[: cfg.n_strategies]
    z = encode_many(strategies, model)
    base = decode_batch(model, z)
    d = z.shape[1]
    keys, latents = [], []
    for i in range(len(strategies)):
        for e, eps in enumerate(cfg.epsilons):
            for r in range(cfg.n_perturbations_per):
                rng = np.random.default_rng([cfg.seed, i, e, r])
                keys.append((i, e, r))
                latents.append(z[i] + eps * rng.standard_normal(d))
    children = decode_batch(model, np.array(latents)) if latents else []
    cache: dict = {}
    cells = []
    for (i, e, r), child in zip(keys, children):
        parent = base[i]
        ok = not isinstance(child, DecodeFailure)
        structural = divergence = None
        if ok and not isinstance(parent, DecodeFailure):
            structural = ast_edit_distance(parent, child)
            pa = _backtest(parent, series, window, bt_cfg, cache)
            ch = _backtest(child, series, window, bt_cfg, cache)
            if pa is not None and ch is not None:
                divergence = shared_divergence(pa, ch)
        cells.append(CellOutcome(i, e, cfg.epsilons[e], r, ok, structural, divergence,
                                 None if ok else child.reason))
    success, struct_m, div_m, counts = [], [], [], []
    for e in range(len(cfg.epsilons)):
        group = [c for c in cells if c.eps_index == e]
        counts.append(len(group))
        success.append(sum(c.success for c in group) / len(group) if group else 0.0)
        struct_m.append(_mean([c.structural for c in group if c.structural is not None]))
        div_m.append(_mean([c.divergence for c in group if c.divergence is not None]))
    tre = trust_region_epsilon(cfg.epsilons, success, div_m, cfg.success_threshold, cfg.divergence_threshold)
    return LocalityReport(list(cfg.epsilons), success, struct_m, div_m, counts, tre, cfg.to_dict(), cells)


def _content(ids: Sequence[int]) -> list[int]:
    ids = list(ids)
    return ids[: ids.index(EOS_ID) + 1] if EOS_ID in ids else ids


def block_perturb_test(
    model: ProgramVAE,
    strategies: Sequence[Strategy],
    epsilon: float = 0.1,
    seed: int = 0,
) -> DisentanglementReport:
    """Perturb one block at a time and measure per-signal decoded change.

    Distances compare raw greedy token sequences, so decodes that fail to
    parse still contribute.
    """
    strategies = list(strategies)
    z = encode_many(strategies, model)
    n, dim = z.shape
    ds = dim // 4
    base = decode_tokens(model, z)
    pert = []
    for i in range(n):
        for k in range(4):
            rng = np.random.default_rng([seed, i, k])
            zp = z[i].copy()
            zp[k * ds:(k + 1) * ds] += epsilon * rng.standard_normal(ds)
            pert.append(zp)
    rows = decode_tokens(model, np.array(pert)) if n else []
    M = np.zeros((4, 4))
    target_only = np.zeros(4)
    changed = 0
    for i in range(n):
        for k in range(4):
            got = rows[4 * i + k]
            dist = [token_edit_distance(_content(base[i][j]), _content(got[j])) for j in range(4)]
            M[k] += dist
            target_only[k] += all(dist[j] == 0 for j in range(4) if j != k)
            changed += any(x > 0 for x in dist)
    if n:
        M /= n
        target_only /= n
    total = float(M.sum())
    cross = float((total - np.trace(M)) / total) if total > 0 else 0.0
    return DisentanglementReport(
        M, cross, float(target_only.mean()) if n else 1.0, target_only.tolist(),
        changed / (4 * n) if n else 0.0, float(epsilon), n,
    )


def swap_test(
    model: ProgramVAE,
    strategy_a: Strategy,
    strategy_b: Strategy,
    block_k: int | Iterable[int],
) -> dict:
    """Replace block(s) ``block_k`` of a's latent with b's and decode.

    Reports which signals changed relative to decode(encode(a)) and whether
    each swapped signal matches decode(encode(b)).
    """
    blocks = [block_k] if isinstance(block_k, int) else sorted(set(block_k))
    za, zb = encode_many([strategy_a, strategy_b], model)
    ds = len(za) // 4
    zs = za.copy()
    for k in blocks:
        zs[k * ds:(k + 1) * ds] = zb[k * ds:(k + 1) * ds]
    dec_a, dec_b, dec_s = decode_tokens(model, np.stack([za, zb, zs]))
    changed = [_content(dec_s[j]) != _content(dec_a[j]) for j in range(4)]
    transferred = {SIGNALS[k]: _content(dec_s[k]) == _content(dec_b[k]) for k in blocks}
    decoded = decode_batch(model, zs[None, :])[0]
    return {
        "blocks": [SIGNALS[k] for k in blocks],
        "changed": dict(zip(SIGNALS, changed)),
        "transferred": transferred,
        "only_target_changed": not any(c for j, c in enumerate(changed) if j not in blocks),
        "decoded": None if isinstance(decoded, DecodeFailure) else decoded.to_dict(),
        "decode_failure": decoded.reason if isinstance(decoded, DecodeFailure) else None,
    }
