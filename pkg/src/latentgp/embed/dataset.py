"""Program corpus for VAE training: random strategies that trade in every fold."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..backtest import BacktestConfig, signal_arrays, simulate
from ..errors import FilterStarvation, NoBars
from ..lang.ast import Strategy
from ..lang.generate import MutationConfig, random_strategy
from ..lang.parser import parse_strategy
from ..market import FoldSpec, MarketSeries

PROBE_BATCH = 1000
MIN_ACCEPT_RATE = 0.001


@dataclass
class ProgramDataset:
    strategies: list[Strategy]
    train_idx: list[int]
    val_idx: list[int]
    seed: int = 0
    stats: dict = field(default_factory=dict)

    @property
    def train(self) -> list[Strategy]:
        return [self.strategies[i] for i in self.train_idx]

    @property
    def val(self) -> list[Strategy]:
        return [self.strategies[i] for i in self.val_idx]

    def __len__(self) -> int:
        return len(self.strategies)

    def save(self, path: str | Path) -> None:
        """JSON-lines: one ``{"le", "se", "lx", "sx", "split"}`` object per strategy."""
        split = {i: "train" for i in self.train_idx} | {i: "val" for i in self.val_idx}
        with open(path, "w") as fh:
            for i, s in enumerate(self.strategies):
                fh.write(json.dumps({**s.to_dict(), "split": split[i]}) + "\n")

    @classmethod
    def load(cls, path: str | Path, seed: int = 0) -> "ProgramDataset":
        strategies, tr, va = [], [], []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                row = json.loads(line)
                split = row.pop("split", "train")
                (tr if split == "train" else va).append(len(strategies))
                strategies.append(parse_strategy(row))
        return cls(strategies, tr, va, seed=seed)


def trades_in_every_fold(
    s: Strategy,
    series: MarketSeries,
    folds: Sequence[FoldSpec],
    bt_cfg: BacktestConfig | None = None,
    role: str = "train",
) -> bool:
    sig = signal_arrays(s, series)
    for fold in folds:
        window = series.index_range(*fold.window(role))
        try:
            if not simulate(s, series, window, bt_cfg, signals=sig).valid:
                return False
        except NoBars:
            return False
    return True


def split_indices(n: int, seed: int, train_frac: float = 0.8) -> tuple[list[int], list[int]]:
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(train_frac * n))
    return sorted(perm[:k].tolist()), sorted(perm[k:].tolist())


def build_dataset(
    n: int,
    series: MarketSeries,
    folds: Sequence[FoldSpec],
    gen_cfg: MutationConfig | None = None,
    seed: int = 0,
    max_seq_len: int = 96,
    bt_cfg: BacktestConfig | None = None,
) -> ProgramDataset:
    """Rejection-sample ``n`` distinct strategies that trade in each fold's training window.

    No fitness information is used: the filter only removes strategies that
    never trade.
    """
    gen_cfg = gen_cfg or MutationConfig()
    rng = np.random.default_rng(seed)
    kept: list[Strategy] = []
    seen: set[Strategy] = set()
    draws = 0
    while len(kept) < n:
        s = random_strategy(gen_cfg, rng)
        draws += 1
        for sig in s.signals:
            assert len(sig.tokens()) + 2 <= max_seq_len, "generator exceeded max_seq_len"
        if s not in seen and trades_in_every_fold(s, series, folds, bt_cfg):
            kept.append(s)
            seen.add(s)
        if draws == PROBE_BATCH and len(kept) < MIN_ACCEPT_RATE * draws:
            raise FilterStarvation(f"only {len(kept)} of {draws} random strategies traded in every fold")
    tr, va = split_indices(n, seed)
    stats = {"draws": draws, "accepted": n, "acceptance_rate": n / draws}
    return ProgramDataset(kept, tr, va, seed=seed, stats=stats)
