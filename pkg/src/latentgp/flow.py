"""One-shot mutation-delta model F(z, phi) -> delta.

Training pairs come from logged mutation traces: a mutation is eligible
when the child decoded and traded, stayed within the behavioral trust
region, and strictly improved fitness. The model is a plain MLP regressor
trained with mean-squared error; prediction is a single forward pass.
"""

from __future__ import annotations

import copy
import json
import logging
import math
from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .errors import CheckpointMismatch, DimMismatch, DivergenceDetected, EmptyDataset
from .phi import PHI_DIM, RhoBin, in_trust_region, phi_distance, rho_bin

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "latentgp-flow/1"
N_RHO = len(RhoBin)


@dataclass(frozen=True)
class FlowModelConfig:
    latent_dim: int = 128
    phi_dim: int = PHI_DIM
    use_rho: bool = False
    hidden: tuple[int, ...] = (256, 256, 256)
    activation: str = "silu"
    lr: float = 1e-3
    weight_decay: float = 0.0
    epochs: int = 200
    batch_size: int = 128
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.latent_dim < 1 or self.phi_dim < 0 or any(h < 1 for h in self.hidden):
            raise ValueError("dimensions must be positive")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("lr, epochs and batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")

    @property
    def input_dim(self) -> int:
        return self.latent_dim + self.phi_dim + (N_RHO if self.use_rho else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


_ACTIVATIONS = {"silu": nn.SiLU, "gelu": nn.GELU, "tanh": nn.Tanh, "relu": nn.ReLU}


@dataclass(frozen=True)
class FlowTrainExample:
    z_parent: np.ndarray
    phi_parent: np.ndarray
    delta_target: np.ndarray
    rho: RhoBin
    improved: bool


@dataclass
class FlowDatasetStats:
    records: int = 0
    valid: int = 0
    in_trust_region: int = 0
    improved: int = 0
    eligible: int = 0
    rho_bins: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def record_example(rec: dict) -> FlowTrainExample | None:
    """Training example for one trace record, or None if it is not eligible."""
    if not rec.get("valid") or rec.get("parent_phi") is None or rec.get("child_phi") is None:
        return None
    d = phi_distance(rec["parent_phi"], rec["child_phi"])
    pf, cf = rec.get("parent_fitness"), rec.get("child_fitness")
    improved = pf is not None and cf is not None and cf > pf
    if not (in_trust_region(d) and improved):
        return None
    zp = np.asarray(rec["parent_latent"], dtype=float)
    zc = np.asarray(rec["child_latent"], dtype=float)
    return FlowTrainExample(zp, np.asarray(rec["parent_phi"], dtype=float), zc - zp, rho_bin(d), True)


def iter_records(trace_files: Iterable[str | Path]) -> Iterable[dict]:
    for path in trace_files:
        with open(path) as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)


def build_flow_dataset(
    trace_files: Iterable[str | Path],
    min_examples: int = 1,
) -> tuple[list[FlowTrainExample], FlowDatasetStats]:
    """Eligible (valid, trust-region, strictly improving) mutations from JSONL traces."""
    stats = FlowDatasetStats()
    out: list[FlowTrainExample] = []
    bins: Counter = Counter()
    for rec in iter_records(trace_files):
        stats.records += 1
        if not rec.get("valid") or rec.get("child_phi") is None or rec.get("parent_phi") is None:
            continue
        stats.valid += 1
        d = phi_distance(rec["parent_phi"], rec["child_phi"])
        pf, cf = rec.get("parent_fitness"), rec.get("child_fitness")
        stats.in_trust_region += in_trust_region(d)
        stats.improved += pf is not None and cf is not None and cf > pf
        ex = record_example(rec)
        if ex is not None:
            out.append(ex)
            bins[ex.rho.value] += 1
    stats.eligible = len(out)
    stats.rho_bins = {b.value: bins.get(b.value, 0) for b in RhoBin}
    if len(out) < min_examples:
        raise EmptyDataset(f"{len(out)} eligible examples, need at least {min_examples}")
    return out, stats


class FlowModel(nn.Module):
    """MLP from [z, phi (, rho one-hot)] to a full-width latent delta."""

    def __init__(self, cfg: FlowModelConfig):
        super().__init__()
        self.cfg = cfg
        layers: list[nn.Module] = []
        width = cfg.input_dim
        for h in cfg.hidden:
            layers += [nn.Linear(width, h), _ACTIVATIONS[cfg.activation]()]
            width = h
        layers.append(nn.Linear(width, cfg.latent_dim))
        self.net = nn.Sequential(*layers)
        self.register_buffer("in_mean", torch.zeros(cfg.input_dim, dtype=torch.float64))
        self.register_buffer("in_std", torch.ones(cfg.input_dim, dtype=torch.float64))
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net((x - self.in_mean) / self.in_std)


def model_inputs(cfg: FlowModelConfig, z, phi, rho=None) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=float))
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if z.shape[1] != cfg.latent_dim or phi.shape[1] != cfg.phi_dim:
        raise DimMismatch(
            f"expected latent {cfg.latent_dim} and phi {cfg.phi_dim}, got {z.shape[1]} and {phi.shape[1]}"
        )
    parts = [z, phi]
    if cfg.use_rho:
        onehot = np.zeros((len(z), N_RHO))
        rho = RhoBin.SMALL if rho is None else rho
        onehot[:, RhoBin(rho).index] = 1.0
        parts.append(onehot)
    return np.concatenate(parts, axis=1)


@torch.no_grad()
def predict_delta(z, phi, model: FlowModel, rho: RhoBin | None = None) -> np.ndarray:
    """One forward pass; returns the full-width delta (shape follows ``z``)."""
    x = model_inputs(model.cfg, z, phi, rho)
    model.eval()
    out = model(torch.from_numpy(x)).numpy()
    return out[0] if np.ndim(z) == 1 else out


def _examples_arrays(cfg: FlowModelConfig, examples: Sequence[FlowTrainExample]):
    x = np.concatenate([model_inputs(cfg, e.z_parent, e.phi_parent, e.rho) for e in examples])
    y = np.stack([np.asarray(e.delta_target, dtype=float) for e in examples])
    return x, y


def split_train_val(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    k = int(math.floor(frac * n)) if n >= 10 else 0
    return np.sort(perm[k:]), np.sort(perm[:k])


def train_flow(
    examples: Sequence[FlowTrainExample],
    cfg: FlowModelConfig | None = None,
) -> tuple[FlowModel, list[dict]]:
    """Fit F by MSE; keeps the weights with the lowest validation loss.

    With fewer than 10 examples there is no held-out split and the training
    loss is used for selection.
    """
    cfg = cfg or FlowModelConfig()
    if not examples:
        raise EmptyDataset("no training examples")
    torch.manual_seed(cfg.seed)
    x, y = _examples_arrays(cfg, examples)
    tr, va = split_train_val(len(x), cfg.val_fraction, cfg.seed)
    model = FlowModel(cfg)
    mean = x[tr].mean(axis=0)
    std = x[tr].std(axis=0)
    model.in_mean.copy_(torch.from_numpy(mean))
    model.in_std.copy_(torch.from_numpy(np.where(std > 1e-8, std, 1.0)))
    xt, yt = torch.from_numpy(x), torch.from_numpy(y)
    sel = va if len(va) else tr
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed)
    best, best_loss, history = None, math.inf, []
    for epoch in range(cfg.epochs):
        model.train()
        order = tr[rng.permutation(len(tr))]
        tot = 0.0
        for i in range(0, len(order), cfg.batch_size):
            idx = torch.from_numpy(order[i:i + cfg.batch_size])
            loss = torch.mean((model(xt[idx]) - yt[idx]) ** 2)
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite flow loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
        model.eval()
        with torch.no_grad():
            s = torch.from_numpy(sel)
            val_loss = torch.mean((model(xt[s]) - yt[s]) ** 2).item()
        history.append({"epoch": epoch, "train_loss": tot / len(tr), "val_loss": val_loss})
        if val_loss < best_loss:
            best_loss = val_loss
            best = copy.deepcopy(model.state_dict())
    model.load_state_dict(best)
    model.eval()
    log.info("flow model trained: best val loss %.6g", best_loss)
    return model, history


def save_flow(model: FlowModel, path: str | Path, extra: dict | None = None) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "format": CHECKPOINT_FORMAT,
        "config": model.cfg.to_dict(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }, path)


def load_flow(path: str | Path) -> tuple[FlowModel, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(f"{path} is not a flow checkpoint")
    model = FlowModel(FlowModelConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["extra"]
