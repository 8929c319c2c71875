import csv
import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from latentgp.cli import aggregate_reports, main, resolve_config, build_parser
from latentgp.config import ConfigInvalid, config_from_dict, load_config
from latentgp.evolve import direction_mask

from conftest import ROOT, run_cli

SMOKE = ROOT / "configs" / "smoke.json"
PIPELINE = [
    ["gen-programs"], ["train-vae"], ["diagnose"], ["disentangle"],
    ["evolve", "--operator", "isotropic"], ["evolve", "--operator", "dual_block"],
]


def cli(out, *args):
    return main([*args, "--config", str(SMOKE), "--out", str(out)])


def hand_traces(path: Path, dim: int, n: int = 12):
    """Eligible isotropic-style records so the flow model has data at smoke scale."""
    rng = np.random.default_rng(0)
    with open(path, "w") as fh:
        for i in range(n):
            zp = rng.standard_normal(dim)
            rec = {"valid": True, "parent_fitness": 0.1, "child_fitness": 0.2 + i / 100,
                   "parent_phi": [0.1] * 8, "child_phi": [0.12] * 8,
                   "parent_latent": zp.tolist(), "child_latent": (zp + 0.1).tolist()}
            fh.write(json.dumps(rec) + "\n")


def full_pipeline(out: Path) -> Path:
    for args in PIPELINE:
        assert cli(out, *args) == 0, args
    run = out / "smoke"
    assert cli(out, "train-flow", "--traces", "handmade") == 1  # no such traces
    hand_traces(run / "traces" / "handmade_s0_f1.jsonl", 32)
    assert cli(out, "train-flow", "--traces", "handmade") == 0
    assert cli(out, "evolve", "--operator", "gcm") == 0
    assert cli(out, "report") == 0
    return run


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    a = full_pipeline(tmp_path_factory.mktemp("a"))
    b = full_pipeline(tmp_path_factory.mktemp("b"))
    return a, b


def test_layout(runs):
    run, _ = runs
    for rel in ["config.json", "data/programs.jsonl", "checkpoints/vae.pt", "checkpoints/flow.pt",
                "traces/isotropic_s0_f1.jsonl", "traces/gcm_s1_f1.jsonl",
                "reports/summary.json", "reports/summary.csv", "reports/runs.csv",
                "reports/locality.csv", "reports/disentanglement.json", "reports/latent_quality.json",
                "figures/locality.png", "figures/disentanglement.png", "figures/best_so_far.png",
                "figures/operators.png", "figures/vae_training.png"]:
        assert (run / rel).exists(), rel


def test_reports_carry_provenance(runs):
    run, _ = runs
    cfg = load_config(SMOKE)
    for p in (run / "reports").glob("*.json"):
        prov = json.loads(p.read_text())["provenance"]
        assert prov["config_hash"] == cfg.hash() and prov["code_version"]
    for p in (run / "reports").glob("*.csv"):
        assert p.read_text().startswith(f"# config_hash={cfg.hash()}")
    for line in (run / "traces" / "isotropic_s0_f1.jsonl").read_text().splitlines():
        assert json.loads(line)["config_hash"] == cfg.hash()


def test_byte_identical_reruns(runs):
    a, b = runs
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    assert files == sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    different = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    # config.json records where the run was written; nothing else may differ
    assert different == ["config.json"]
    ca, cb = (json.loads((r / "config.json").read_text()) for r in runs)
    assert ca["config"].pop("out_dir") != cb["config"].pop("out_dir")
    assert ca == cb


def test_gcm_trace_respects_masks(runs):
    run, _ = runs
    for line in (run / "traces" / "gcm_s0_f1.jsonl").read_text().splitlines():
        r = json.loads(line)
        m = direction_mask(len(r["parent_latent"]), r["mask"])
        p, c = np.array(r["parent_latent"]), np.array(r["child_latent"])
        assert np.array_equal(p[~m], c[~m])


def test_summary_table(runs):
    run, _ = runs
    summary = json.loads((run / "reports" / "summary.json").read_text())
    ops = {r["operator"]: r for r in summary["operators"]}
    assert set(ops) == {"isotropic", "dual_block", "gcm"}
    assert all(r["n_runs"] == 2 for r in ops.values())
    rows = list(csv.reader(open(run / "reports" / "summary.csv")))
    assert rows[1][0] == "operator"


def test_report_refuses_mixed_configs(runs, tmp_path):
    src, _ = runs
    run = tmp_path / "smoke"
    shutil.copytree(src, run)
    p = run / "reports" / "es_isotropic_s0_f1.json"
    d = json.loads(p.read_text())
    d["provenance"]["config_hash"] = "0" * 16
    p.write_text(json.dumps(d))
    assert cli(tmp_path, "report") == 2
    assert cli(tmp_path, "report", "--force") == 0


def test_aggregate_median_and_max():
    reps = [{"config": {"operator": "isotropic"}, "test_sharpe": x, "best_fitness": x,
             "budget_fraction_to_best": f} for x, f in ((0.5, 0.2), (1.0, 0.4), (2.0, 0.9))]
    (row,) = aggregate_reports(reps)
    assert row["median_sharpe"] == 1.0 and row["max_sharpe"] == 2.0
    assert row["median_budget_fraction"] == 0.4 and row["mean_budget_fraction"] == pytest.approx(0.5)
    (row,) = aggregate_reports([{**reps[0], "test_sharpe": None}])
    assert row["median_sharpe"] is None and row["max_sharpe"] is None


def test_exit_codes(tmp_path):
    assert main(["evolve", "--config", str(SMOKE), "--out", str(tmp_path)]) == 1   # no checkpoint
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"es": {"mu": 3, "nonsense": 1}}))
    assert main(["gen-programs", "--config", str(bad), "--out", str(tmp_path)]) == 2
    (tmp_path / "broken.json").write_text("{")
    assert main(["gen-programs", "--config", str(tmp_path / "broken.json")]) == 2
    assert main(["gen-programs", "--config", str(tmp_path / "missing.json")]) == 2
    with pytest.raises(SystemExit) as exc:
        main(["no-such-command"])
    assert exc.value.code == 2


def test_entry_point_errors_are_json(tmp_path):
    proc = run_cli("evolve", "--config", str(SMOKE), "--out", str(tmp_path), check=False)
    assert proc.returncode == 1
    err = json.loads(proc.stderr.strip().splitlines()[-1])
    assert err["error"] == "MissingArtifact" and err["exit_code"] == 1


def test_seed_override_reaches_components():
    args = build_parser().parse_args(["evolve", "--config", str(SMOKE), "--seed", "7"])
    cfg = resolve_config(args)
    assert cfg.seed == cfg.dataset.seed == cfg.train.seed == cfg.geometry.seed == cfg.flow.seed == 7
    assert cfg.es_seeds == (7,)


def test_config_validation():
    with pytest.raises(ConfigInvalid):
        config_from_dict({"vae": {"d_sig": 8}})             # flow latent_dim mismatch
    with pytest.raises(ConfigInvalid):
        config_from_dict({"es": {"operator": "nope"}})
    cfg = config_from_dict({})
    assert cfg.hash() == config_from_dict({"out_dir": "elsewhere", "run_id": "x"}).hash()
    assert cfg.hash() != config_from_dict({"seed": 1}).hash()
