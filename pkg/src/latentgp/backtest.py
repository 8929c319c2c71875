"""Deterministic single-position backtester for GPTL strategies.

Signals are evaluated on bar ``t``'s close and the resulting order fills at
bar ``t+1``'s open. While in a position only its own exit signal is looked
at; while flat LE is checked before SE. A position still open on the last
bar of the window is liquidated at that bar's close.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import LengthMismatch, NoBars, TooShort, UndefinedIndicatorAt
from .lang.ast import Compare, Const, Field, Indicator, Logical, Node, Not, Strategy
from .market import MarketSeries

TRADING_DAYS = 252

_CMP = {
    ">": np.greater, "<": np.less, ">=": np.greater_equal,
    "<=": np.less_equal, "==": np.equal,
}


@dataclass(frozen=True)
class BacktestConfig:
    initial_equity: float = 10_000.0
    slippage_rate: float = 0.001
    fee_rate: float = 0.0005

    def __post_init__(self):
        if self.initial_equity <= 0:
            raise ValueError("initial_equity must be positive")
        for name in ("slippage_rate", "fee_rate"):
            if not (0.0 <= getattr(self, name) <= 0.1):
                raise ValueError(f"{name} must lie in [0, 0.1]")


@dataclass(frozen=True)
class Trade:
    direction: int
    entry_index: int
    entry_price: float
    exit_index: int
    exit_price: float
    hold_bars: int
    qty: float
    pnl: float
    fees: float
    forced: bool = False


@dataclass
class BacktestResult:
    equity_curve: np.ndarray
    actions: np.ndarray
    trades: list[Trade]
    sharpe: float
    sharpe_degenerate: bool
    start_index: int
    end_index: int
    initial_equity: float = 10_000.0
    extras: dict = field(default_factory=dict)

    @property
    def n_trades(self) -> int:
        return len(self.trades)

    @property
    def valid(self) -> bool:
        return self.n_trades > 0

    @property
    def n_bars(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict:
        return {
            "start_index": self.start_index,
            "end_index": self.end_index,
            "n_bars": self.n_bars,
            "n_trades": self.n_trades,
            "valid": self.valid,
            "sharpe": self.sharpe,
            "sharpe_degenerate": self.sharpe_degenerate,
            "final_equity": float(self.equity_curve[-1]),
            "equity_curve": [float(x) for x in self.equity_curve],
            "actions": [int(x) for x in self.actions],
            "trades": [asdict(t) for t in self.trades],
        }


# -- signal evaluation ----------------------------------------------------

def numeric_array(node: Node, series: MarketSeries) -> np.ndarray:
    if isinstance(node, Field):
        return series[node.name]
    if isinstance(node, Const):
        return np.full(len(series), node.value)
    if isinstance(node, Indicator):
        return series.indicator(node.name, node.field.name, node.period)
    raise TypeError(f"not a numeric node: {node}")


def boolean_array(node: Node, series: MarketSeries) -> tuple[np.ndarray, np.ndarray]:
    """(values, defined) arrays for a Boolean node over the whole series."""
    if isinstance(node, Compare):
        a = numeric_array(node.left, series)
        b = numeric_array(node.right, series)
        defined = ~(np.isnan(a) | np.isnan(b))
        with np.errstate(invalid="ignore"):
            return _CMP[node.op](a, b) & defined, defined
    if isinstance(node, Not):
        v, d = boolean_array(node.operand, series)
        return ~v & d, d
    if isinstance(node, Logical):
        lv, ld = boolean_array(node.left, series)
        rv, rd = boolean_array(node.right, series)
        v = (lv & rv) if node.op == "&" else (lv | rv)
        return v & ld & rd, ld & rd
    raise TypeError(f"not a Boolean node: {node}")


def signal_arrays(s: Strategy, series: MarketSeries) -> tuple[np.ndarray, np.ndarray]:
    """Stacked (4, n) signal values and the per-bar all-defined mask."""
    vals, defined = [], np.ones(len(series), dtype=bool)
    for sig in s.signals:
        v, d = boolean_array(sig, series)
        vals.append(v)
        defined &= d
    return np.stack(vals), defined


def evaluate_signals(s: Strategy, series: MarketSeries, t: int) -> tuple[bool, bool, bool, bool]:
    vals, defined = signal_arrays(s, series)
    if not defined[t]:
        raise UndefinedIndicatorAt(t)
    return tuple(bool(x) for x in vals[:, t])


# -- simulation -----------------------------------------------------------

def sharpe(equity_curve, annualization: float = TRADING_DAYS) -> tuple[float, bool]:
    """Annualized Sharpe of close-to-close equity returns (rf = 0).

    Returns ``(value, degenerate)``; zero-variance curves give ``(0.0, True)``.
    """
    eq = np.asarray(equity_curve, dtype=float)
    if len(eq) < 2:
        raise TooShort("Sharpe needs at least two equity points")
    rets = np.diff(eq) / eq[:-1]
    if len(rets) < 2:
        return 0.0, True
    sd = float(np.std(rets, ddof=1))
    if sd == 0.0 or not np.isfinite(sd):
        return 0.0, True
    return float(np.mean(rets) / sd * np.sqrt(annualization)), False


def simulate(
    s: Strategy,
    series: MarketSeries,
    window: tuple[int, int] | None = None,
    cfg: BacktestConfig | None = None,
    signals: tuple[np.ndarray, np.ndarray] | None = None,
) -> BacktestResult:
    """Run ``s`` over bars ``window = [a, b)``; warm-up bars are skipped."""
    cfg = cfg or BacktestConfig()
    a, b = window if window is not None else (0, len(series))
    if not (0 <= a <= b <= len(series)):
        raise ValueError(f"window {window} outside series of length {len(series)}")
    vals, defined = signals if signals is not None else signal_arrays(s, series)
    idx = np.flatnonzero(defined[a:b])
    if len(idx) == 0:
        raise NoBars(f"no bar in [{a}, {b}) has all indicators defined")
    t0 = a + int(idx[0])
    le, se, lx, sx = (v.tolist() for v in vals)
    opens = series["open"].tolist()
    closes = series["close"].tolist()
    slip, fee = cfg.slippage_rate, cfg.fee_rate

    n = b - t0
    equity_curve = np.empty(n)
    actions = np.zeros(n, dtype=np.int8)
    trades: list[Trade] = []
    realized = cfg.initial_equity
    pos = 0
    pending = 0  # +1/-1 enter, 2 exit
    qty = entry_fill = entry_fee = 0.0
    entry_t = -1

    def close_out(t, px, forced):
        nonlocal realized, pos
        exit_fee = fee * qty * px
        pnl = pos * qty * (px - entry_fill)
        realized = realized - entry_fee - exit_fee + pnl
        hold = t - entry_t + (1 if forced else 0)
        trades.append(Trade(pos, entry_t, entry_fill, t, px, hold, qty, pnl, entry_fee + exit_fee, forced))
        pos = 0

    for i in range(n):
        t = t0 + i
        if pending == 2:
            close_out(t, opens[t] * (1 - pos * slip), False)
        elif pending:
            pos = pending
            entry_fill = opens[t] * (1 + pos * slip)
            qty = realized / (entry_fill * (1 + fee))
            entry_fee = fee * qty * entry_fill
            entry_t = t
        pending = 0
        actions[i] = pos
        if pos and t == b - 1:
            close_out(t, closes[t] * (1 - pos * slip), True)
            equity_curve[i] = realized
            continue
        if pos:
            equity_curve[i] = realized - entry_fee + pos * qty * (closes[t] - entry_fill)
        else:
            equity_curve[i] = realized
        if t == b - 1:
            break
        if pos == 1:
            if lx[t]:
                pending = 2
        elif pos == -1:
            if sx[t]:
                pending = 2
        elif le[t]:
            pending = 1
        elif se[t]:
            pending = -1

    if n >= 2:
        sr, degen = sharpe(equity_curve)
    else:
        sr, degen = 0.0, True
    return BacktestResult(equity_curve, actions, trades, sr, degen, t0, b, cfg.initial_equity)


def action_divergence(a, b) -> float:
    """Fraction of bars whose positions differ (normalized Hamming distance)."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise LengthMismatch(f"action sequences differ in length: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))
