"""Market data: OHLCV series, indicators, regime, synthetic data and folds."""

from __future__ import annotations

import csv
import datetime as dt
import math
import threading
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import (
    BadPeriod, FormatError, OhlcViolation, OrderingError, TestDataAccess,
    TooShort, UnknownIndicator,
)
from .lang.tokens import FIELDS, INDICATORS, MAX_PERIOD, MIN_PERIOD

REGIME_PERIOD = 100
CSV_HEADER = ["date", "open", "high", "low", "close", "volume"]


@dataclass(frozen=True)
class Bar:
    date: dt.date
    open: float
    high: float
    low: float
    close: float
    volume: float


def _check_ohlc(o, h, l, c, v, where=""):
    if not (l <= min(o, c) and max(o, c) <= h):
        raise OhlcViolation(f"OHLC ordering violated{where}: o={o} h={h} l={l} c={c}")
    if v < 0:
        raise OhlcViolation(f"negative volume{where}")


class MarketSeries:
    """Immutable OHLCV arrays with a lazily filled, lock-guarded indicator cache."""

    def __init__(self, dates, open, high, low, close, volume, name: str = "series"):
        self.dates = np.asarray(dates, dtype="datetime64[D]")
        self.fields = {
            "open": np.asarray(open, dtype=float),
            "high": np.asarray(high, dtype=float),
            "low": np.asarray(low, dtype=float),
            "close": np.asarray(close, dtype=float),
            "volume": np.asarray(volume, dtype=float),
        }
        for arr in self.fields.values():
            arr.setflags(write=False)
        self.dates.setflags(write=False)
        if len(self.dates) and np.any(np.diff(self.dates.astype(np.int64)) <= 0):
            raise OrderingError("dates must be strictly increasing")
        self.name = name
        self._cache: dict[tuple[str, str, int], np.ndarray] = {}
        self._lock = threading.Lock()
        self._regime: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.dates)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.fields[name]

    @property
    def bars(self) -> list[Bar]:
        f = self.fields
        return [
            Bar(d.item(), f["open"][i], f["high"][i], f["low"][i], f["close"][i], f["volume"][i])
            for i, d in enumerate(self.dates)
        ]

    def indicator(self, name: str, field: str, period: int) -> np.ndarray:
        key = (name, field, period)
        vals = self._cache.get(key)
        if vals is None:
            vals = compute_indicator(self, name, field, period)
            vals.setflags(write=False)
            with self._lock:
                vals = self._cache.setdefault(key, vals)
        return vals

    def regime(self) -> np.ndarray:
        if self._regime is None:
            self._regime = regime(self)
        return self._regime

    def index_range(self, start: dt.date, end: dt.date) -> tuple[int, int]:
        """Half-open bar-index range [a, b) covering dates in [start, end)."""
        a = int(np.searchsorted(self.dates, np.datetime64(start, "D"), side="left"))
        b = int(np.searchsorted(self.dates, np.datetime64(end, "D"), side="left"))
        return a, b

    def truncated(self, n: int) -> "MarketSeries":
        f = self.fields
        return MarketSeries(self.dates[:n], f["open"][:n], f["high"][:n], f["low"][:n],
                            f["close"][:n], f["volume"][:n], name=self.name)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_HEADER)
            f = self.fields
            for i, d in enumerate(self.dates):
                w.writerow([str(d)] + [repr(float(f[k][i])) for k in CSV_HEADER[1:]])


def load_csv(path: str | Path) -> MarketSeries:
    """Read ``date,open,high,low,close,volume`` rows, validate them and sort by date."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header] != CSV_HEADER:
            raise FormatError(f"expected header {','.join(CSV_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise FormatError(f"line {lineno}: expected 6 columns, got {len(row)}")
            try:
                d = dt.date.fromisoformat(row[0].strip())
                o, h, l, c, v = (float(x) for x in row[1:])
            except ValueError as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            if not all(np.isfinite([o, h, l, c, v])):
                raise FormatError(f"line {lineno}: non-finite value")
            _check_ohlc(o, h, l, c, v, where=f" on line {lineno}")
            rows.append((d, o, h, l, c, v))
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise OrderingError(f"duplicate date {cur[0]}")
    if not rows:
        return MarketSeries([], [], [], [], [], [], name=Path(path).stem)
    cols = list(zip(*rows))
    return MarketSeries(*cols, name=Path(path).stem)


@dataclass(frozen=True)
class SynthParams:
    start_date: str = "2006-01-02"
    start_price: float = 100.0
    volatility: float = 0.012       # daily log-return std
    drift: float = 0.0008           # |daily drift| within a regime
    switch_prob: float = 0.01       # per-bar regime switch probability
    bear_vol_mult: float = 1.3
    volume_mean: float = 1.0e6


def synth_series(seed: int, n_days: int, params: SynthParams | None = None) -> MarketSeries:
    """Deterministic regime-switching geometric random walk on business days."""
    if n_days < 1:
        raise ValueError("n_days must be >= 1")
    p = params or SynthParams()
    rng = np.random.default_rng(seed)
    state = np.empty(n_days, dtype=int)
    s = 1
    switches = rng.random(n_days)
    for t in range(n_days):
        if switches[t] < p.switch_prob:
            s = 1 - s
        state[t] = s
    drift = np.where(state == 1, p.drift, -p.drift)
    vol = np.where(state == 1, p.volatility, p.volatility * p.bear_vol_mult)
    gap = rng.normal(0.0, 0.25, n_days) * vol
    body = drift + rng.normal(0.0, 1.0, n_days) * vol * np.sqrt(1 - 0.25**2)
    log_close = np.log(p.start_price) + np.cumsum(gap + body)
    close = np.exp(log_close)
    open_ = np.exp(log_close - body)
    wick_hi = np.abs(rng.normal(0.0, 0.5, n_days)) * vol
    wick_lo = np.abs(rng.normal(0.0, 0.5, n_days)) * vol
    high = np.maximum(open_, close) * np.exp(wick_hi)
    low = np.minimum(open_, close) * np.exp(-wick_lo)
    volume = np.round(p.volume_mean * np.exp(rng.normal(0.0, 0.3, n_days) + 20 * np.abs(body)))
    dates = np.busday_offset(np.datetime64(p.start_date, "D"), np.arange(n_days), roll="forward")
    return MarketSeries(dates, open_, high, low, close, volume, name=f"synth-{seed}")


# -- indicators -----------------------------------------------------------

def _rolling(x: np.ndarray, period: int, fn) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) >= period:
        out[period - 1:] = fn(sliding_window_view(x, period), axis=1)
    return out


def _ema(x: np.ndarray, period: int) -> np.ndarray:
    out = np.full(len(x), np.nan)
    if len(x) < period:
        return out
    alpha = 2.0 / (period + 1)
    val = float(np.mean(x[:period]))
    out[period - 1] = val
    for t in range(period, len(x)):
        val = alpha * x[t] + (1 - alpha) * val
        out[t] = val
    return out


def _rsi(x: np.ndarray, period: int) -> np.ndarray:
    """Wilder RSI; first value at index ``period``. Flat windows read 50."""
    out = np.full(len(x), np.nan)
    if len(x) <= period:
        return out
    diff = np.diff(x)
    gain = np.clip(diff, 0, None)
    loss = np.clip(-diff, 0, None)
    avg_g = float(np.mean(gain[:period]))
    avg_l = float(np.mean(loss[:period]))

    def value(g, l):
        if l == 0.0:
            return 50.0 if g == 0.0 else 100.0
        return 100.0 - 100.0 / (1.0 + g / l)

    out[period] = value(avg_g, avg_l)
    for t in range(period + 1, len(x)):
        avg_g = (avg_g * (period - 1) + gain[t - 1]) / period
        avg_l = (avg_l * (period - 1) + loss[t - 1]) / period
        out[t] = value(avg_g, avg_l)
    return out


def compute_indicator(series: MarketSeries, name: str, field: str, period: int) -> np.ndarray:
    """Indicator values aligned to bars; NaN marks the undefined warm-up prefix."""
    if name not in INDICATORS:
        raise UnknownIndicator(name)
    if field not in FIELDS:
        raise UnknownIndicator(f"unknown field {field}")
    if not isinstance(period, (int, np.integer)) or not (MIN_PERIOD <= period <= MAX_PERIOD):
        raise BadPeriod(f"period {period} outside [{MIN_PERIOD}, {MAX_PERIOD}]")
    x = series[field]
    if name == "SMA":
        return _rolling(x, period, np.mean)
    if name == "MAX":
        return _rolling(x, period, np.max)
    if name == "MIN":
        return _rolling(x, period, np.min)
    if name == "STD":
        return _rolling(x, period, np.std)
    if name == "EMA":
        return _ema(x, period)
    return _rsi(x, period)


def regime(series: MarketSeries) -> np.ndarray:
    """Up-regime flag: 1.0 where close > 100-bar SMA, 0.0 below/equal, NaN undefined."""
    if len(series) < REGIME_PERIOD:
        raise TooShort(f"regime needs at least {REGIME_PERIOD} bars")
    ma = series.indicator("SMA", "close", REGIME_PERIOD)
    out = np.where(series["close"] > ma, 1.0, 0.0)
    out[np.isnan(ma)] = np.nan
    out.setflags(write=False)
    return out


# -- walk-forward folds ---------------------------------------------------

VAL_DAYS = 195
TEST_DAYS = 185
# Fractional training span: the fold table's 910/911-day train windows are
# reproduced exactly by a continuous clock with this span, floored to dates.
TRAIN_DAYS = Fraction("910.4")
EMBARGO_DAYS = 10


@dataclass(frozen=True)
class FoldSpec:
    index: int
    train_start: dt.date
    train_end: dt.date
    val_start: dt.date
    val_end: dt.date
    test_start: dt.date
    test_end: dt.date
    embargo_days: int = EMBARGO_DAYS

    def window(self, role: str) -> tuple[dt.date, dt.date]:
        return getattr(self, f"{role}_start"), getattr(self, f"{role}_end")

    def to_dict(self) -> dict:
        return {k: (v.isoformat() if isinstance(v, dt.date) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d: dict) -> "FoldSpec":
        kw = {k: (dt.date.fromisoformat(v) if isinstance(v, str) else v) for k, v in d.items()}
        return cls(**kw)


def generate_folds(
    anchor_train_start: dt.date,
    anchor_train_end: dt.date,
    k: int,
    embargo_days: int = EMBARGO_DAYS,
    train_days: Fraction | int | str = TRAIN_DAYS,
) -> list[FoldSpec]:
    """Walk-forward folds.

    Fold 1 uses the anchor dates verbatim. Each later fold starts where the
    previous test window ended and trains for ``train_days`` (may be
    fractional); validation, embargo and test spans follow in whole days.
    Boundaries live on a continuous day clock and are floored to dates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    train_days = Fraction(train_days)
    origin = anchor_train_start

    def date(t: Fraction) -> dt.date:
        return origin + dt.timedelta(days=math.floor(t))

    folds = []
    ts = Fraction(0)
    te = Fraction((anchor_train_end - anchor_train_start).days)
    for i in range(1, k + 1):
        ve = te + VAL_DAYS
        xs = ve + embargo_days
        xe = xs + TEST_DAYS
        folds.append(FoldSpec(i, date(ts), date(te), date(te), date(ve), date(xs), date(xe), embargo_days))
        ts = xe
        te = ts + train_days
    return folds


class DataGuard:
    """Hands out fold windows and refuses test windows outside final evaluation."""

    def __init__(self):
        self._final = False

    def window(self, fold: FoldSpec, role: str) -> tuple[dt.date, dt.date]:
        if role not in ("train", "val", "test"):
            raise ValueError(f"unknown window role {role!r}")
        if role == "test" and not self._final:
            raise TestDataAccess(f"test window of fold {fold.index} requested during search/training")
        return fold.window(role)

    @contextmanager
    def final_evaluation(self):
        self._final = True
        try:
            yield self
        finally:
            self._final = False
