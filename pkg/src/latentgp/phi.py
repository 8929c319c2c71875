"""Behavioral embedding of an execution trace and the trust-region bins."""

from __future__ import annotations

import enum

import numpy as np

from .backtest import BacktestResult
from .errors import LengthMismatch, NegativeDistance
from .market import MarketSeries

PHI_DIM = 8
PHI_NAMES = (
    "long_down", "short_down", "long_up", "short_up",
    "entry_rate", "exit_rate", "hold_mean", "hold_std",
)
RHO_THRESHOLDS = (0.05, 0.15, 0.35)
TRUST_RADIUS = 0.35


class RhoBin(enum.Enum):
    TINY = "tiny"
    SMALL = "small"
    MEDIUM = "medium"
    LARGE = "large"

    @property
    def index(self) -> int:
        return list(RhoBin).index(self)


def phi_from_trace(actions, regime, holds) -> np.ndarray:
    """Φ from a position sequence, its aligned regime flags (NaN = undefined) and hold lengths.

    All fractions divide by T = len(actions); regime features only count bars
    whose regime is defined.
    """
    pos = np.asarray(actions)
    r = np.asarray(regime, dtype=float)
    if pos.shape != r.shape:
        raise LengthMismatch(f"actions {pos.shape} vs regime {r.shape}")
    T = len(pos)
    out = np.zeros(PHI_DIM)
    if T == 0:
        return out
    known = ~np.isnan(r)
    up = known & (r == 1.0)
    down = known & (r == 0.0)
    long_ = pos > 0
    short = pos < 0
    out[0] = np.count_nonzero(long_ & down) / T
    out[1] = np.count_nonzero(short & down) / T
    out[2] = np.count_nonzero(long_ & up) / T
    out[3] = np.count_nonzero(short & up) / T
    prev = np.concatenate(([0], pos[:-1]))
    out[4] = np.count_nonzero((prev == 0) & (pos != 0)) / T
    out[5] = np.count_nonzero((prev != 0) & (pos == 0)) / T
    h = np.asarray(holds, dtype=float)
    if h.size:
        out[6] = h.mean() / T
        out[7] = h.std() / T
    return out


def compute_phi(result: BacktestResult, series: MarketSeries) -> np.ndarray:
    """Φ of a backtest; the window is the result's evaluated bars."""
    reg = series.regime()[result.start_index:result.end_index]
    if len(reg) != result.n_bars:
        raise LengthMismatch("backtest result is not aligned with the series")
    return phi_from_trace(result.actions, reg, [t.hold_bars for t in result.trades])


def phi_distance(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=float) - np.asarray(b, dtype=float)))


def rho_bin(d: float) -> RhoBin:
    if d < 0:
        raise NegativeDistance(f"phi distance must be >= 0, got {d}")
    lo, mid, hi = RHO_THRESHOLDS
    if d < lo:
        return RhoBin.TINY
    if d < mid:
        return RhoBin.SMALL
    if d < hi:
        return RhoBin.MEDIUM
    return RhoBin.LARGE


def in_trust_region(d: float) -> bool:
    return d <= TRUST_RADIUS
