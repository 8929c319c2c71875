"""Acceptance criteria 1-11.

Each test records one line in ``conftest.ACCEPTANCE`` (printed in the
terminal summary) and prints it, then asserts. Criteria 7-10 run on the
desk-scale corpus and VAE, built once under ``.cache/`` by ``desk_run``.
"""
from __future__ import annotations

import datetime as dt
import json
import statistics
import time

import numpy as np
import pytest
import torch

import conftest
from conftest import DESK_CONFIG, ROOT, hand_series, run_cli, sample_strategies
from oracles import brute_backtest, brute_phi

from latentgp.backtest import BacktestConfig, simulate
from latentgp.config import load_config
from latentgp.embed import encode_many, load_checkpoint, ProgramDataset
from latentgp.embed.codec import decode_tokens, encode_signals
from latentgp.embed.model import kl_divergence
from latentgp.embed.train import evaluate, framed_signals
from latentgp.errors import NoBars
from latentgp.evolve import (
    EsConfig, direction, direction_mask, evaluations_to_reach, mutate_dual_block, mutate_gcm,
    offspring_best_curve, run_es,
)
from latentgp.flow import build_flow_dataset, train_flow
from latentgp.geometry import block_perturb_test, perturb_sweep
from latentgp.lang import (
    MutationConfig, mutate_signal, parse, parse_strategy, random_strategy, to_text, typecheck,
)
from latentgp.market import DataGuard, generate_folds
from latentgp.phi import compute_phi, in_trust_region, rho_bin, RhoBin

from test_cli import hand_traces
from test_market import FOLD_TABLE

pytestmark = pytest.mark.acceptance


def record(n: int, ok: bool, detail: str) -> None:
    conftest.ACCEPTANCE[n] = (bool(ok), detail)
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


# -- 1. grammar closure -----------------------------------------------------

def test_c1_grammar_closure():
    cfg = MutationConfig()
    rng = np.random.default_rng(1)
    n, failures = 100_000, 0
    t0 = time.perf_counter()
    strategy = None
    for _ in range(n):
        try:
            strategy = random_strategy(cfg, rng)
            back = parse_strategy(strategy.to_dict())
            for sig in back.signals:
                typecheck(sig)
            failures += back != strategy
        except Exception:
            failures += 1
    sig = strategy.signals[0]
    for _ in range(n):
        try:
            new, _ = mutate_signal(sig, cfg, rng)
            back = parse(to_text(new))
            typecheck(back)
            if back != new or new.depth > cfg.max_depth or len(new.tokens()) > cfg.max_tokens:
                failures += 1
            sig = new
        except Exception:
            failures += 1
    secs = time.perf_counter() - t0
    ok = failures == 0 and secs <= 120
    record(1, ok, f"{n} random strategies + {n} signal mutations, {failures} failures, "
                  f"{secs:.1f}s (limit 120s)")
    assert ok


# -- 2. fold table ----------------------------------------------------------

def test_c2_fold_table():
    folds = generate_folds(dt.date(2008, 1, 1), dt.date(2010, 6, 30), 5)
    got = [tuple(d.isoformat() for d in (f.train_start, f.train_end, f.val_start, f.val_end,
                                          f.test_start, f.test_end)) for f in folds]
    dates = sum(len(r) for r in FOLD_TABLE)
    matched = sum(a == b for g, r in zip(got, FOLD_TABLE) for a, b in zip(g, r))
    gaps = [(f.test_start - f.val_end).days for f in folds]
    ok = got == FOLD_TABLE and gaps == [10] * 5
    record(2, ok, f"{matched}/{dates} dates match, embargo gaps {gaps}")
    assert ok


# -- 3. backtest oracle -----------------------------------------------------

def _rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def test_c3_backtest_oracle():
    series = hand_series()
    cfg = BacktestConfig()
    t0 = time.perf_counter()
    compared, mismatches, worst = 0, [], 0.0
    for i, s in enumerate(sample_strategies(2000, 303)):
        ref = brute_backtest(s, series, 0, len(series), cfg.initial_equity, cfg.slippage_rate, cfg.fee_rate)
        try:
            res = simulate(s, series)
        except NoBars:
            if ref is not None:
                mismatches.append((i, "simulate found no bars"))
            continue
        if ref is None:
            mismatches.append((i, "oracle found no bars"))
            continue
        trades = [(t.direction, t.entry_index, t.exit_index, t.forced, t.hold_bars) for t in res.trades]
        ref_trades = [(r["direction"], r["entry_index"], r["exit_index"], r["forced"], r["hold_bars"])
                      for r in ref["trades"]]
        prices = [(_rel(t.entry_price, r["entry_price"]), _rel(t.exit_price, r["exit_price"]))
                  for t, r in zip(res.trades, ref["trades"])]
        err = max([_rel(res.equity_curve[-1], ref["final"])] + [max(p) for p in prices])
        worst = max(worst, err)
        if (res.actions.tolist() != ref["actions"] or trades != ref_trades or err > 1e-9
                or res.start_index != ref["start"]):
            mismatches.append((i, "differs"))
        compared += 1
        if compared == 50:
            break
    secs = time.perf_counter() - t0
    ok = compared == 50 and not mismatches and secs <= 60
    record(3, ok, f"{compared} strategies, {len(mismatches)} mismatches, max rel err {worst:.1e}, {secs:.1f}s")
    assert ok, mismatches[:5]


# -- 4. phi oracle ----------------------------------------------------------

def test_c4_phi_oracle():
    series = hand_series()
    regime = series.regime()
    n, worst = 0, 0.0
    for s in sample_strategies(3000, 404):
        try:
            res = simulate(s, series)
        except NoBars:
            continue
        ref = np.array(brute_phi(res.actions.tolist(), regime[res.start_index:res.end_index].tolist()))
        worst = max(worst, float(np.max(np.abs(compute_phi(res, series) - ref))))
        n += 1
        if n == 100:
            break
    bins = [rho_bin(x) for x in (0.0, 0.049999, 0.05, 0.149999, 0.15, 0.349999, 0.35, 2.0)]
    bins_ok = bins == [RhoBin.TINY, RhoBin.TINY, RhoBin.SMALL, RhoBin.SMALL, RhoBin.MEDIUM,
                       RhoBin.MEDIUM, RhoBin.LARGE, RhoBin.LARGE]
    trust_ok = in_trust_region(0.35) and not in_trust_region(np.nextafter(0.35, 1.0))
    ok = n == 100 and worst <= 1e-12 and bins_ok and trust_ok
    record(4, ok, f"{n} backtests, max abs err {worst:.1e}; bin edges {'ok' if bins_ok else 'WRONG'}, "
                  f"0.35 inside trust region: {trust_ok}")
    assert ok


# -- 5. mask algebra --------------------------------------------------------

def test_c5_mask_algebra():
    D = 128
    lo, sh = direction_mask(D, "long"), direction_mask(D, "short")
    partition = bool(np.all(lo ^ sh)) and lo.sum() == sh.sum() == 64
    rng = np.random.default_rng(5)
    bad = 0
    for i in range(10_000):
        z = rng.standard_normal(D)
        g = int(rng.integers(0, 2))
        m = direction_mask(D, direction(g))
        dense = rng.standard_normal(D) * 0.1 + np.sign(rng.standard_normal(D)) * 0.05
        for out in (mutate_dual_block(z, 0.1, g, rng),
                    mutate_gcm(z, np.zeros(8), g, lambda zz, p: dense, alpha=1.0, sigma_in=0.05,
                               sigma_out=0.05, rng=rng)):
            if not (np.array_equal(out[~m], z[~m]) and int(np.sum(out != z)) == 64):
                bad += 1
    ok = partition and bad == 0
    record(5, ok, f"10000 latents x 2 operators, {bad} violations; masks partition 128 dims: {partition}")
    assert ok


# -- 6. GCM conformance with a stub -----------------------------------------

def test_c6_gcm_stub():
    D = 128
    rng = np.random.default_rng(6)
    checks, bad = 0, 0
    for _ in range(500):
        for g in (0, 1):
            m = direction_mask(D, direction(g))
            # dyadic values keep the difference z' - z exact in binary floating point
            z = rng.integers(-512, 512, D) / 64.0
            stub_out = rng.integers(-512, 512, D) / 128.0
            out = mutate_gcm(z, np.zeros(8), g, lambda zz, p: stub_out, alpha=1.0, sigma_in=0.0,
                             sigma_out=0.0, rng=rng)
            bad += not np.array_equal(out - z, np.where(m, stub_out, 0.0))
            # arbitrary floats: z' is exactly z plus the masked stub output
            z2, s2 = rng.standard_normal(D), rng.standard_normal(D)
            out2 = mutate_gcm(z2, np.zeros(8), g, lambda zz, p: s2, alpha=1.0, sigma_in=0.0,
                              sigma_out=0.0, rng=rng)
            bad += not np.array_equal(out2, np.where(m, z2 + s2, z2))
            out3 = mutate_gcm(z2, np.zeros(8), g, lambda zz, p: s2, alpha=0.0, sigma_in=0.3,
                              sigma_out=0.0, rng=rng)
            bad += not np.array_equal(out3, z2)
            checks += 3
    ok = bad == 0
    record(6, ok, f"{checks} checks over both parities, {bad} violations")
    assert ok


# -- desk-scale artifacts ---------------------------------------------------

@pytest.fixture(scope="module")
def desk(desk_run):
    cfg = load_config(DESK_CONFIG, {"out_dir": str(desk_run.parent)})
    model, _ = load_checkpoint(desk_run / "checkpoints" / "vae.pt")
    ds = ProgramDataset.load(desk_run / "data" / "programs.jsonl", seed=cfg.dataset.seed)
    series = cfg.data.load(ROOT)
    return cfg, model, ds, series


# -- 7. VAE mechanism checks ------------------------------------------------

def test_c7_vae_mechanisms(desk):
    cfg, model, ds, _ = desk
    parts = {}

    # (a) block isolation over 500 (latent, block) trials
    rng = np.random.default_rng(7)
    z_enc = encode_many(ds.val[:63], model)
    z = np.concatenate([z_enc, rng.standard_normal((62, model.cfg.latent_dim))])
    base = decode_tokens(model, z)
    d = model.cfg.d_sig
    violations = trials = 0
    for k in range(4):
        zk = np.zeros_like(z)
        zk[:, k * d:(k + 1) * d] = z[:, k * d:(k + 1) * d]
        got = decode_tokens(model, zk)
        violations += sum(got[i][k] != base[i][k] for i in range(len(z)))
        trials += len(z)
    parts["a"] = (violations == 0 and trials == 500, f"block isolation {violations}/{trials} violations")

    # (b) pad invariance: encoding a sequence alone or inside a padded batch is bit-identical
    seqs = framed_signals(ds.val[:50])
    mu_all, lv_all = encode_signals(model, seqs)
    pad_bad = 0
    for i in range(0, len(seqs), 7):
        mu1, lv1 = encode_signals(model, [seqs[i]])
        pad_bad += not (np.array_equal(mu1[0], mu_all[i]) and np.array_equal(lv1[0], lv_all[i]))
    parts["b"] = (pad_bad == 0, f"pad invariance {pad_bad} mismatches")

    # (c) KL gradient vs central finite differences
    torch.manual_seed(7)
    mu = torch.randn(4, model.cfg.latent_dim, dtype=torch.float64, requires_grad=True)
    lv = (0.5 * torch.randn(4, model.cfg.latent_dim, dtype=torch.float64)).requires_grad_(True)
    kl_divergence(mu, lv).backward()
    worst, h = 0.0, 1e-6
    for param in (mu, lv):
        for idx in [(0, 0), (1, 17), (2, 64), (3, 127)]:
            with torch.no_grad():
                orig = param[idx].item()
                param[idx] = orig + h
                up = kl_divergence(mu, lv).item()
                param[idx] = orig - h
                down = kl_divergence(mu, lv).item()
                param[idx] = orig
            fd = (up - down) / (2 * h)
            worst = max(worst, abs(fd - param.grad[idx].item()) / max(abs(fd), 1e-12))
    parts["c"] = (worst <= 1e-4, f"KL grad rel err {worst:.1e}")

    # (d) training-set token accuracy after the desk schedule
    acc = evaluate(model, ds.train, beta=cfg.train.kl_beta_max)["acc"]
    parts["d"] = (acc >= 0.9, f"train token acc {acc:.4f} (>= 0.9)")

    ok = all(p[0] for p in parts.values()) and len(ds) == 2000 and model.cfg.d_sig == 32
    record(7, ok, "; ".join(f"({k}) {v[1]}" for k, v in parts.items()) + f"; corpus {len(ds)}")
    assert ok


# -- 8. locality curve ------------------------------------------------------

def test_c8_locality(desk):
    cfg, model, ds, series = desk
    fold = cfg.folds.folds()[cfg.folds.search_folds[0] - 1]
    window = series.index_range(*DataGuard().window(fold, cfg.diagnose.window))
    rep = perturb_sweep(model, ds.val, cfg.geometry, series, window, cfg.backtest)
    eps = rep.epsilons
    succ = dict(zip(eps, rep.decode_success_rate))
    gap = succ[0.01] - succ[5.0]
    # divergence is undefined exactly where no perturbed decode survives
    undefined_ok = all((d is None) == (r == 0.0) for d, r in zip(rep.mean_divergence, rep.decode_success_rate))
    div = [x for x in rep.mean_divergence if x is not None]
    drops = [a - b for a, b in zip(div, div[1:]) if b < a]
    shape_ok = len(drops) == 0 or (len(drops) == 1 and drops[0] <= 0.02)
    ok = gap >= 0.2 and shape_ok and undefined_ok and len(div) >= 2
    record(8, ok, f"success(0.01)-success(5.0) = {succ[0.01]:.3f}-{succ[5.0]:.3f} = {gap:.3f} (>= 0.2); "
                  f"divergence over eps {[e for e, d in zip(eps, rep.mean_divergence) if d is not None]} = "
                  f"{[round(x, 3) for x in div]} (undefined where 0 decodes succeed), inversions {[round(x, 3) for x in drops]}")
    assert ok


# -- 9. disentanglement -----------------------------------------------------

def test_c9_disentanglement(desk):
    _, model, ds, _ = desk
    rep = block_perturb_test(model, ds.val, epsilon=0.1, seed=9)
    ok = rep.cross_talk == 0.0 and rep.target_only_rate >= 0.95
    record(9, ok, f"eps 0.1 on {rep.n_strategies} strategies: cross-talk {rep.cross_talk}, "
                  f"target-only {rep.target_only_rate:.3f} (>= 0.95), change rate {rep.change_rate:.3f}")
    assert ok


# -- 10. operator comparison ------------------------------------------------

FLOW_SEEDS = (10, 11, 12, 13, 14)   # isotropic runs whose traces train the flow model
COMPARE_SEEDS = (0, 1, 2, 3, 4)


def test_c10_operator_comparison(desk, tmp_path):
    cfg, model, _, series = desk
    t0 = time.perf_counter()
    fi = cfg.folds.search_folds[0]
    fold = cfg.folds.folds()[fi - 1]
    iso = EsConfig(**{**cfg.es.to_dict(), "operator": "isotropic"})
    common = dict(bt_cfg=cfg.backtest, gen_cfg=cfg.language)

    files = []
    for seed in FLOW_SEEDS:
        p = tmp_path / f"isotropic_s{seed}_f{fi}.jsonl"
        with open(p, "w") as fh:
            run_es(EsConfig(**{**iso.to_dict(), "seed": seed}), model, series, fold,
                   trace=lambda r: fh.write(r.to_json() + "\n"), **common)
        files.append(p)
    examples, stats = build_flow_dataset(files)
    flow, _ = train_flow(examples, cfg.flow)

    runs = {"isotropic": [], "gcm": []}
    for seed in COMPARE_SEEDS:
        for op in runs:
            c = EsConfig(**{**iso.to_dict(), "operator": op, "seed": seed})
            runs[op].append(run_es(c, model, series, fold, flow_model=flow if op == "gcm" else None, **common))

    budget = iso.lam * iso.generations
    target = statistics.median(r.best_fitness for r in runs["isotropic"])
    reach = [evaluations_to_reach(offspring_best_curve(r), target) for r in runs["gcm"]]
    reach_frac = statistics.median(budget + 1 if x is None else x for x in reach) / budget
    bf = {op: statistics.median(r.budget_fraction_to_best for r in rs) for op, rs in runs.items()}
    best = {op: statistics.median(r.best_fitness for r in rs) for op, rs in runs.items()}
    secs = time.perf_counter() - t0
    summary = {"target": target, "gcm_evals_to_target": reach, "median_fraction_to_target": reach_frac,
               "median_budget_fraction": bf, "median_best": best, "flow_examples": stats.eligible,
               "per_seed": {op: [{"seed": s, "best": r.best_fitness, "initial_best": r.best_so_far[0],
                                  "budget_fraction": r.budget_fraction_to_best}
                                 for s, r in zip(COMPARE_SEEDS, rs)] for op, rs in runs.items()},
               "seconds": secs}
    (ROOT / ".cache" / "criterion10.json").write_text(json.dumps(summary, indent=2))
    ok = reach_frac <= 0.5 and bf["gcm"] < bf["isotropic"] and secs <= 1800
    record(10, ok, f"iso median best {target:.3f}; gcm reaches it at {reach_frac:.1%} of budget "
                   f"(per seed {reach}); median budget fraction gcm {bf['gcm']:.3f} vs iso "
                   f"{bf['isotropic']:.3f}; flow trained on {stats.eligible} records; gcm sigma_out {iso.sigma_out}; "
                   f"{secs:.0f}s")
    assert ok


# -- 11. determinism --------------------------------------------------------

SMOKE = ROOT / "configs" / "smoke.json"
COMMANDS = [
    ["gen-programs"], ["train-vae"], ["diagnose"], ["disentangle"],
    ["evolve", "--operator", "isotropic"], ["evolve", "--operator", "dual_block"],
    ["train-flow", "--traces", "handmade"], ["evolve", "--operator", "gcm"], ["report"],
]


def _pipeline(out):
    """Every command in a fresh process.

    Smoke-scale isotropic runs log too few eligible records to train the flow
    model, so it is trained on a fixed hand-made trace file instead.
    """
    for args in COMMANDS:
        if args[0] == "train-flow":
            hand_traces(out / "smoke" / "traces" / "handmade_s0_f1.jsonl", 32)
        proc = run_cli(*args, "--config", str(SMOKE), "--out", str(out), check=False)
        assert proc.returncode == 0, proc.stderr
    return out / "smoke"


def test_c11_determinism(tmp_path):
    a = _pipeline(tmp_path / "a")
    b = _pipeline(tmp_path / "b")
    compared = [p.relative_to(a) for sub in ("traces", "reports") for p in sorted((a / sub).iterdir())]
    other = [p.relative_to(b) for sub in ("traces", "reports") for p in sorted((b / sub).iterdir())]
    diff = [str(f) for f in compared if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = compared == other and not diff and len(compared) > 0
    record(11, ok, f"{len(compared)} trace/report files across {len(COMMANDS)} commands, "
                   f"{len(diff)} differ {diff[:3]}")
    assert ok
