"""Command-line entry point.

Every command reads one JSON config, writes its artifacts under
``<out_dir>/<run_id>/`` and stamps each report with the config hash, code
version and seed::

    <run>/config.json
    <run>/data/programs.jsonl
    <run>/checkpoints/{vae.pt, flow.pt}
    <run>/traces/<operator>_s<seed>_f<fold>.jsonl
    <run>/reports/*.json, *.csv
    <run>/figures/*.png

Exit status: 0 ok, 1 domain error, 2 usage or config error. Errors are
printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import statistics
import sys
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path

import torch

from . import plotting
from .config import CODE_VERSION, RunConfig, canonical_json, config_from_dict, load_config
from .embed.codec import load_checkpoint, save_checkpoint
from .embed.dataset import ProgramDataset, build_dataset
from .embed.metrics import latent_quality_report
from .embed.model import ProgramVAE
from .embed.train import evaluate, train_vae
from .errors import ConfigInvalid, LatentGPError, MissingArtifact
from .evolve import EsConfig, EsReport, final_test_sharpe, run_es
from .flow import build_flow_dataset, load_flow, save_flow, train_flow
from .geometry import block_perturb_test, perturb_sweep, swap_test
from .market import DataGuard, MarketSeries

log = logging.getLogger("latentgp")

THREADS_ENV = "LATENTGP_THREADS"


class Run:
    """Resolved config plus the on-disk layout of one run directory."""

    def __init__(self, cfg: RunConfig, config_path: Path | None = None):
        self.cfg = cfg
        self.root = cfg.run_dir()
        self.base = config_path.parent if config_path else Path.cwd()
        self.hash = cfg.hash()
        self._series: MarketSeries | None = None

    def path(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    @property
    def provenance(self) -> dict:
        return {"config_hash": self.hash, "code_version": CODE_VERSION, "seed": self.cfg.seed}

    @property
    def series(self) -> MarketSeries:
        if self._series is None:
            self._series = self.cfg.data.load(self.base)
        return self._series

    def write_config(self) -> None:
        self.path("config.json").write_text(
            json.dumps({"provenance": self.provenance, "config": self.cfg.to_dict()}, indent=2, sort_keys=True) + "\n"
        )

    def write_json(self, name: str, payload: dict) -> Path:
        p = self.path("reports", name)
        p.write_text(json.dumps({"provenance": self.provenance, **payload}, indent=2, sort_keys=True,
                                allow_nan=False) + "\n")
        return p

    def write_csv(self, name: str, rows: Sequence[dict]) -> Path:
        p = self.path("reports", name)
        with open(p, "w", newline="") as fh:
            fh.write(f"# config_hash={self.hash} code_version={CODE_VERSION} seed={self.cfg.seed}\n")
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            for r in rows:
                w.writerow({k: ("" if v is None else v) for k, v in r.items()})
        return p

    def require(self, *parts: str) -> Path:
        p = self.root.joinpath(*parts)
        if not p.exists():
            raise MissingArtifact(f"required artifact missing: {p}")
        return p

    def vae(self) -> ProgramVAE:
        model, _ = load_checkpoint(self.require("checkpoints", "vae.pt"))
        return model

    def dataset(self) -> ProgramDataset:
        return ProgramDataset.load(self.require("data", "programs.jsonl"), seed=self.cfg.dataset.seed)

    def fold(self, index: int):
        return self.cfg.folds.folds()[index - 1]


# -- commands -----------------------------------------------------------------

def cmd_gen_programs(run: Run, args) -> dict:
    cfg = run.cfg
    ds = build_dataset(cfg.dataset.n_programs, run.series, cfg.folds.folds(), cfg.language,
                       seed=cfg.dataset.seed, max_seq_len=cfg.vae.max_seq_len, bt_cfg=cfg.backtest)
    ds.save(run.path("data", "programs.jsonl"))
    out = {"n": len(ds), "n_train": len(ds.train_idx), "n_val": len(ds.val_idx), **ds.stats}
    run.write_json("dataset.json", out)
    return out


def cmd_train_vae(run: Run, args) -> dict:
    cfg = run.cfg
    ds = run.dataset()
    model, history = train_vae(ds.train, ds.val, cfg.vae, cfg.train)
    save_checkpoint(model, run.path("checkpoints", "vae.pt"), extra=run.provenance)
    train_eval = evaluate(model, ds.train, beta=cfg.train.kl_beta_max)
    out = {"history": history, "train_token_accuracy": train_eval["acc"],
           "train_recon": train_eval["recon"]}
    run.write_json("vae_training.json", out)
    run.write_csv("vae_training.csv", history)
    plotting.plot_training(history, run.path("figures", "vae_training.png"))
    return {"train_token_accuracy": train_eval["acc"], "epochs": len(history)}


def _window(run: Run, fold_index: int, role: str) -> tuple[int, int]:
    return run.series.index_range(*DataGuard().window(run.fold(fold_index), role))


def cmd_diagnose(run: Run, args) -> dict:
    cfg = run.cfg
    model, ds = run.vae(), run.dataset()
    quality = latent_quality_report(model, ds.train, cfg.diagnose.n_prior_samples, seed=cfg.geometry.seed)
    quality_val = latent_quality_report(model, ds.val, 0, seed=cfg.geometry.seed, train_set=ds.train)
    window = _window(run, cfg.folds.search_folds[0], cfg.diagnose.window)
    rep = perturb_sweep(model, ds.val, cfg.geometry, run.series, window, cfg.backtest)
    run.write_json("latent_quality.json", {"train": quality,
                                           "val": {k: quality_val[k] for k in ("recon_acc", "norm_edit_dist")}})
    run.write_json("locality.json", rep.to_dict(with_cells=True))
    run.write_csv("locality.csv", rep.rows())
    plotting.plot_locality(rep.rows(), run.path("figures", "locality.png"))
    return {"trust_region_epsilon": rep.trust_region_epsilon, "validity": quality["validity"],
            "recon_acc": quality["recon_acc"]}


def cmd_disentangle(run: Run, args) -> dict:
    cfg = run.cfg
    model, ds = run.vae(), run.dataset()
    strategies = ds.val[: cfg.diagnose.disentangle_strategies]
    rep = block_perturb_test(model, strategies, cfg.diagnose.disentangle_epsilon, cfg.geometry.seed)
    swaps = []
    for i in range(min(len(strategies) - 1, 20)):
        for k in range(4):
            swaps.append({"a": i, "b": i + 1, "block": k,
                          **swap_test(model, strategies[i], strategies[i + 1], k)})
    swap_rate = sum(s["only_target_changed"] for s in swaps) / len(swaps) if swaps else None
    run.write_json("disentanglement.json", {**rep.to_dict(), "swap_only_target_rate": swap_rate,
                                            "swaps": swaps})
    run.write_csv("disentanglement.csv", rep.rows())
    plotting.plot_disentanglement(rep.matrix, run.path("figures", "disentanglement.png"),
                                  title=f"ε = {rep.epsilon}")
    return {"cross_talk": rep.cross_talk, "target_only_rate": rep.target_only_rate,
            "swap_only_target_rate": swap_rate}


def _trace_name(op: str, seed: int, fold: int) -> str:
    return f"{op}_s{seed}_f{fold}"


def cmd_evolve(run: Run, args) -> dict:
    cfg = run.cfg
    es_cfg = cfg.es
    if getattr(args, "operator", None):
        es_cfg = EsConfig(**{**es_cfg.to_dict(), "operator": args.operator})
    model = run.vae()
    flow = None
    if es_cfg.operator == "gcm":
        flow, _ = load_flow(run.require("checkpoints", "flow.pt"))
    summary = []
    for seed in cfg.es_seeds:
        for fi in cfg.folds.search_folds:
            c = EsConfig(**{**es_cfg.to_dict(), "seed": seed})
            name = _trace_name(c.operator, seed, fi)
            trace_path = run.path("traces", name + ".jsonl")
            with open(trace_path, "w") as fh:
                rep = run_es(c, model, run.series, run.fold(fi), flow_model=flow, guard=DataGuard(),
                             bt_cfg=cfg.backtest, gen_cfg=cfg.language,
                             trace=lambda r: fh.write(r.to_json() + "\n"),
                             run_id=f"{cfg.run_id}/{name}", provenance=run.provenance)
            run.write_json(f"es_{name}.json", rep.to_dict())
            summary.append({"run": name, "best_fitness": rep.to_dict()["best_fitness"],
                            "budget_fraction_to_best": rep.budget_fraction_to_best})
    return {"runs": summary}


def cmd_train_flow(run: Run, args) -> dict:
    cfg = run.cfg
    op = getattr(args, "traces", None) or cfg.flow_traces
    files = sorted(run.root.joinpath("traces").glob(f"{op}_*.jsonl"))
    if not files:
        raise MissingArtifact(f"no '{op}' traces under {run.root / 'traces'}")
    examples, stats = build_flow_dataset(files)
    model, history = train_flow(examples, cfg.flow)
    save_flow(model, run.path("checkpoints", "flow.pt"), extra={**run.provenance, "traces": [f.name for f in files]})
    run.write_json("flow_dataset.json", {"trace_files": [f.name for f in files], **stats.to_dict()})
    run.write_json("flow_training.json", {"history": history})
    return {"eligible": stats.eligible, "best_val_loss": min(h["val_loss"] for h in history)}


def _median(xs):
    xs = [x for x in xs if x is not None]
    return statistics.median(xs) if xs else None


def _mean(xs):
    xs = [x for x in xs if x is not None]
    return sum(xs) / len(xs) if xs else None


def aggregate_reports(reports: Sequence[dict]) -> list[dict]:
    """Per-operator median/max test Sharpe, median validation fitness and budget fractions."""
    groups: dict[str, list[dict]] = defaultdict(list)
    for r in reports:
        groups[r["config"]["operator"]].append(r)
    rows = []
    for op in sorted(groups):
        rs = groups[op]
        test = [r.get("test_sharpe") for r in rs]
        fit = [r.get("best_fitness") for r in rs]
        bf = [r.get("budget_fraction_to_best") for r in rs]
        rows.append({
            "operator": op,
            "n_runs": len(rs),
            "median_sharpe": _median(test),
            "max_sharpe": max((x for x in test if x is not None), default=None),
            "median_fitness": _median(fit),
            "max_fitness": max((x for x in fit if x is not None), default=None),
            "median_budget_fraction": _median(bf),
            "mean_budget_fraction": _mean(bf),
        })
    return rows


def cmd_report(run: Run, args) -> dict:
    files = sorted(run.root.joinpath("reports").glob("es_*.json"))
    if not files:
        raise MissingArtifact(f"no ES run reports under {run.root / 'reports'}")
    reports = [json.loads(f.read_text()) for f in files]
    hashes = {r["provenance"]["config_hash"] for r in reports}
    if len(hashes) > 1 and not getattr(args, "force", False):
        raise ConfigInvalid(f"run reports come from different configs {sorted(hashes)}; use --force")
    guard = DataGuard()
    with guard.final_evaluation():
        for r in reports:
            rep = EsReport.from_dict({k: v for k, v in r.items() if k not in ("provenance", "test_sharpe")})
            r["test_sharpe"] = final_test_sharpe(rep, run.series, run.fold(rep.fold), guard, run.cfg.backtest)
    table = aggregate_reports(reports)
    per_run = [{"run": f.stem[3:], "operator": r["config"]["operator"], "seed": r["config"]["seed"],
                "fold": r["fold"], "best_fitness": r["best_fitness"], "test_sharpe": r["test_sharpe"],
                "budget_fraction_to_best": r["budget_fraction_to_best"]} for f, r in zip(files, reports)]
    run.write_json("summary.json", {"operators": table, "runs": per_run, "config_hashes": sorted(hashes)})
    run.write_csv("summary.csv", table)
    run.write_csv("runs.csv", per_run)
    curves: dict[str, list] = defaultdict(list)
    for r in reports:
        curves[r["config"]["operator"]].append(r["best_so_far"])
    plotting.plot_best_so_far(curves, run.path("figures", "best_so_far.png"))
    plotting.plot_operator_summary(table, run.path("figures", "operators.png"))
    return {"operators": table}


COMMANDS = {
    "gen-programs": (cmd_gen_programs, "sample the program corpus"),
    "train-vae": (cmd_train_vae, "train the program VAE"),
    "diagnose": (cmd_diagnose, "latent quality and locality sweep"),
    "disentangle": (cmd_disentangle, "single-block perturbation and swap tests"),
    "evolve": (cmd_evolve, "run the evolution strategy"),
    "train-flow": (cmd_train_flow, "train the mutation-delta model from traces"),
    "report": (cmd_report, "aggregate run reports and evaluate on test folds"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="latentgp", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name, (_, help_) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", type=Path, help="JSON run config (defaults apply when omitted)")
        sp.add_argument("--seed", type=int, help="override every component seed")
        sp.add_argument("--out", type=str, help="output root directory")
        sp.add_argument("--run-id", type=str, help="run directory name")
        sp.add_argument("-v", "--verbose", action="store_true")
        if name == "evolve":
            sp.add_argument("--operator", choices=["isotropic", "dual_block", "gcm"])
        if name == "train-flow":
            sp.add_argument("--traces", help="operator whose traces to learn from")
        if name == "report":
            sp.add_argument("--force", action="store_true", help="aggregate across config hashes")
    return p


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config, {"out_dir": args.out, "run_id": args.run_id})
    if args.seed is not None:
        s = args.seed
        d = cfg.to_dict()
        d["seed"] = s
        d["dataset"]["seed"] = s
        d["train"]["seed"] = s
        d["geometry"]["seed"] = s
        d["flow"]["seed"] = s
        d["es_seeds"] = [s]
        cfg = config_from_dict(d)
    return cfg


def _fail(code: int, exc: BaseException) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    threads = os.environ.get(THREADS_ENV)
    if threads:
        torch.set_num_threads(int(threads))
    try:
        cfg = resolve_config(args)
        run = Run(cfg, args.config)
        run.write_config()
        out = COMMANDS[args.command][0](run, args)
    except ConfigInvalid as exc:
        return _fail(2, exc)
    except LatentGPError as exc:
        return _fail(1, exc)
    print(canonical_json({"command": args.command, "run_dir": str(run.root), **out}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
