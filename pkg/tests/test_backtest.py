import numpy as np
import pytest

from latentgp.backtest import (
    BacktestConfig, action_divergence, evaluate_signals, sharpe, simulate,
)
from latentgp.errors import LengthMismatch, NoBars, TooShort, UndefinedIndicatorAt
from latentgp.lang import parse_strategy
from latentgp.market import MarketSeries

from conftest import sample_strategies
from oracles import brute_backtest, brute_sharpe


def make_series(closes, opens=None):
    closes = np.asarray(closes, dtype=float)
    opens = closes.copy() if opens is None else np.asarray(opens, dtype=float)
    n = len(closes)
    d = np.busday_offset(np.datetime64("2021-01-01"), np.arange(n), roll="forward")
    hi = np.maximum(opens, closes) + 1
    lo = np.minimum(opens, closes) - 1
    return MarketSeries(d, opens, hi, lo, closes, np.full(n, 1000.0))


def strat(le="close < 0", se="close < 0", lx="close < 0", sx="close < 0"):
    return parse_strategy({"le": le, "se": se, "lx": lx, "sx": sx})


def compare_with_oracle(s, series, window=None, cfg=BacktestConfig()):
    a, b = window or (0, len(series))
    ref = brute_backtest(s, series, a, b, cfg.initial_equity, cfg.slippage_rate, cfg.fee_rate)
    if ref is None:
        with pytest.raises(NoBars):
            simulate(s, series, window, cfg)
        return None
    res = simulate(s, series, window, cfg)
    assert res.start_index == ref["start"]
    assert res.actions.tolist() == ref["actions"]
    assert len(res.trades) == len(ref["trades"])
    for t, r in zip(res.trades, ref["trades"]):
        assert (t.direction, t.entry_index, t.exit_index, t.forced, t.hold_bars) == \
               (r["direction"], r["entry_index"], r["exit_index"], r["forced"], r["hold_bars"])
        assert t.entry_price == pytest.approx(r["entry_price"], rel=1e-12)
        assert t.exit_price == pytest.approx(r["exit_price"], rel=1e-12)
    assert res.equity_curve[-1] == pytest.approx(ref["final"], rel=1e-9)
    assert np.allclose(res.equity_curve, ref["equity"], rtol=1e-9, atol=0)
    return res, ref


def test_matches_oracle_on_random_strategies(series200):
    compared = 0
    for s in sample_strategies(150, 11):
        if compare_with_oracle(s, series200) is not None:
            compared += 1
    assert compared >= 30


def test_matches_oracle_on_subwindow(series200):
    for s in sample_strategies(40, 12):
        compare_with_oracle(s, series200, (120, 180))


def test_fill_at_next_open_with_slippage_and_fee():
    series = make_series([10, 10, 11, 12, 12], opens=[10, 10, 10.5, 11.5, 12])
    cfg = BacktestConfig(initial_equity=1000.0, slippage_rate=0.01, fee_rate=0.001)
    s = strat(le="close > 5", lx="close > 11")
    res = simulate(s, series, cfg=cfg)
    t0 = res.trades[0]
    assert t0.entry_index == 1 and t0.entry_price == pytest.approx(10 * 1.01)
    qty = 1000.0 / (10.1 * 1.001)
    assert t0.qty == pytest.approx(qty)
    # lx true at bar 3's close -> exit at bar 4's open
    assert t0.exit_index == 4 and t0.exit_price == pytest.approx(12 * 0.99)
    fees = 0.001 * qty * 10.1 + 0.001 * qty * 11.88
    assert t0.fees == pytest.approx(fees)
    assert res.equity_curve[-1] == pytest.approx(1000.0 + qty * (11.88 - 10.1) - fees)


def test_long_entry_beats_short_entry():
    res = simulate(strat(le="close > 0", se="close > 0"), make_series([5, 6, 7, 8]))
    assert all(t.direction == 1 for t in res.trades)


def test_exit_priority_over_reentry():
    # lx and le both true every bar: enter, exit, enter, ... never doubles up
    res = simulate(strat(le="close > 0", lx="close > 0"), make_series([5, 6, 7, 8, 9, 10]))
    assert res.actions.tolist() == [0, 1, 0, 1, 0, 1]
    assert [t.forced for t in res.trades] == [False, False, True]


def test_forced_liquidation_at_last_close():
    series = make_series([5, 6, 7, 8], opens=[5, 5.5, 6.5, 7.5])
    cfg = BacktestConfig(slippage_rate=0.0, fee_rate=0.0)
    res = simulate(strat(le="close > 0"), series, cfg=cfg)
    t = res.trades[-1]
    assert t.forced and t.exit_index == 3 and t.exit_price == 8.0
    assert t.hold_bars == 3
    assert res.equity_curve[-1] == pytest.approx(10_000 * 8 / 5.5)


def test_short_pnl_sign():
    cfg = BacktestConfig(slippage_rate=0.0, fee_rate=0.0)
    res = simulate(strat(se="close > 0"), make_series([10, 10, 9, 8]), cfg=cfg)
    assert res.trades[0].direction == -1
    assert res.equity_curve[-1] == pytest.approx(10_000 * (1 + (10 - 8) / 10))


def test_no_trades_invalid_and_degenerate():
    res = simulate(strat(), make_series([1, 2, 3, 4]))
    assert not res.valid and res.sharpe == 0.0 and res.sharpe_degenerate


def test_warmup_skipped_and_nobars():
    s = strat(le="SMA(close, 3) > 0")
    res = simulate(s, make_series([1, 2, 3, 4, 5]))
    assert res.start_index == 2
    with pytest.raises(NoBars):
        simulate(s, make_series([1, 2]))


def test_evaluate_signals_undefined():
    s = strat(le="SMA(close, 3) > 2")
    series = make_series([1, 2, 3, 4])
    with pytest.raises(UndefinedIndicatorAt):
        evaluate_signals(s, series, 0)
    assert evaluate_signals(s, series, 3) == (True, False, False, False)


def test_sharpe_matches_loop():
    rng = np.random.default_rng(0)
    eq = 100 * np.cumprod(1 + rng.normal(0.001, 0.01, 300))
    val, degen = sharpe(eq)
    assert not degen
    assert val == pytest.approx(brute_sharpe(list(eq)), rel=1e-12)
    assert sharpe([1.0, 1.0, 1.0]) == (0.0, True)
    with pytest.raises(TooShort):
        sharpe([1.0])


def test_config_validation():
    with pytest.raises(ValueError):
        BacktestConfig(initial_equity=0)
    with pytest.raises(ValueError):
        BacktestConfig(fee_rate=0.5)


def test_action_divergence():
    assert action_divergence([0, 1, -1, 0], [0, 1, 1, 1]) == 0.5
    assert action_divergence([], []) == 0.0
    with pytest.raises(LengthMismatch):
        action_divergence([0], [0, 1])


def test_to_dict_is_json_ready(series200):
    import json
    for s in sample_strategies(30, 13):
        try:
            res = simulate(s, series200)
        except NoBars:
            continue
        json.dumps(res.to_dict(), allow_nan=False)
