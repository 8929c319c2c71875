"""VAE training: teacher-forced reconstruction plus annealed KL."""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import DivergenceDetected
from ..lang.ast import Strategy
from .model import ProgramVAE, VaeConfig, kl_divergence
from .tokenizer import EOS_ID, PAD_ID, SOS_ID, token_ids

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 32          # strategies per batch (4 sequences each)
    lr: float = 1e-3
    weight_decay: float = 1e-5
    kl_beta_max: float = 0.1
    kl_anneal_epochs: int = 50
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "lr", "kl_anneal_epochs", "grad_clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.kl_beta_max < 0 or self.weight_decay < 0:
            raise ValueError("kl_beta_max and weight_decay must be >= 0")

    @classmethod
    def full_scale(cls) -> "TrainConfig":
        """Schedule for the full-size model."""
        return cls(epochs=50, batch_size=128, lr=1e-4)

    def to_dict(self) -> dict:
        return asdict(self)


def kl_beta(epoch: int, cfg: TrainConfig) -> float:
    """Linear warm-up of the KL weight from 0 at epoch 0 to ``kl_beta_max``."""
    return cfg.kl_beta_max * min(1.0, epoch / cfg.kl_anneal_epochs)


def framed_signals(strategies: Sequence[Strategy]) -> list[list[int]]:
    return [[SOS_ID] + token_ids(sig) + [EOS_ID] for s in strategies for sig in s.signals]


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    n = max(len(x) for x in seqs)
    ids = torch.full((len(seqs), n), PAD_ID, dtype=torch.long)
    for i, x in enumerate(seqs):
        ids[i, : len(x)] = torch.tensor(x)
    return ids, ids != PAD_ID


def batch_tensors(strategies: Sequence[Strategy]) -> tuple[torch.Tensor, torch.Tensor]:
    """Framed ids for the 4*B signals, padded to the batch maximum, plus mask."""
    return pad_batch(framed_signals(strategies))


def length_batches(lengths: Sequence[int], batch: int, rng: np.random.Generator, pool: int = 50) -> list[np.ndarray]:
    """Shuffled batches of similar-length sequences to limit padding."""
    order = rng.permutation(len(lengths))
    lengths = np.asarray(lengths)
    out = []
    for c in range(0, len(order), batch * pool):
        chunk = order[c:c + batch * pool]
        chunk = chunk[np.argsort(lengths[chunk], kind="stable")]
        out.extend(chunk[i:i + batch] for i in range(0, len(chunk), batch))
    return [out[i] for i in rng.permutation(len(out))]


def batch_losses(model: ProgramVAE, ids: torch.Tensor, mask: torch.Tensor, sample: bool = True):
    """(recon CE, KL, token accuracy) for one batch of framed sequences."""
    mu, logvar = model.encode(ids, mask)
    z = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar) if sample else mu
    dec_in, target = ids[:, :-1], ids[:, 1:]
    logits = model.decode_logits(z, dec_in)
    valid = target != PAD_ID
    recon = F.cross_entropy(logits[valid], target[valid])
    acc = (logits.argmax(-1)[valid] == target[valid]).float().mean()
    return recon, kl_divergence(mu, logvar), acc


@torch.no_grad()
def evaluate(model: ProgramVAE, strategies: Sequence[Strategy], beta: float, batch_size: int = 64) -> dict:
    """Posterior-mean losses and teacher-forced token accuracy over ``strategies``."""
    model.eval()
    tot = {"recon": 0.0, "kl": 0.0, "acc": 0.0}
    weight = 0
    for i in range(0, len(strategies), batch_size):
        chunk = strategies[i:i + batch_size]
        ids, mask = batch_tensors(chunk)
        recon, kl, acc = batch_losses(model, ids, mask, sample=False)
        ntok = int((ids[:, 1:] != PAD_ID).sum())
        tot["recon"] += float(recon) * ntok
        tot["acc"] += float(acc) * ntok
        tot["kl"] += float(kl) * len(chunk)
        weight += ntok
    n = max(len(strategies), 1)
    out = {"recon": tot["recon"] / weight, "acc": tot["acc"] / weight, "kl": tot["kl"] / n}
    out["loss"] = out["recon"] + beta * out["kl"]
    return out


def train_vae(
    train: Sequence[Strategy],
    val: Sequence[Strategy],
    vae_cfg: VaeConfig | None = None,
    train_cfg: TrainConfig | None = None,
    on_epoch: Callable[[int, dict], None] | None = None,
) -> tuple[ProgramVAE, list[dict]]:
    """Train a :class:`ProgramVAE`; returns the lowest-validation-loss weights and history."""
    vae_cfg = vae_cfg or VaeConfig()
    cfg = train_cfg or TrainConfig()
    if not train:
        raise ValueError("empty training set")
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = ProgramVAE(vae_cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    seqs = framed_signals(train)
    lengths = [len(x) for x in seqs]
    rows = 4 * cfg.batch_size
    steps_per_epoch = len(length_batches(lengths, rows, np.random.default_rng(0)))
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=cfg.epochs * steps_per_epoch)
    val = list(val) or list(train)
    best_state, best_loss = None, math.inf
    history = []
    for epoch in range(cfg.epochs):
        beta = kl_beta(epoch, cfg)
        model.train()
        run = {"recon": 0.0, "kl": 0.0, "acc": 0.0}
        for b, idx in enumerate(length_batches(lengths, rows, rng)):
            ids, mask = pad_batch([seqs[i] for i in idx])
            recon, kl, acc = batch_losses(model, ids, mask)
            loss = recon + beta * kl
            if not torch.isfinite(loss):
                raise DivergenceDetected(f"non-finite loss at epoch {epoch}, step {b}")
            opt.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            opt.step()
            sched.step()
            run["recon"] += recon.item() / steps_per_epoch
            run["kl"] += kl.item() / steps_per_epoch
            run["acc"] += acc.item() / steps_per_epoch
        v = evaluate(model, val, beta)
        row = {"epoch": epoch, "beta": beta, "train_recon": run["recon"], "train_kl": run["kl"],
               "train_acc": run["acc"], "val_loss": v["loss"], "val_recon": v["recon"],
               "val_kl": v["kl"], "val_acc": v["acc"]}
        history.append(row)
        log.info("epoch %d beta=%.3f train_recon=%.4f val_loss=%.4f val_acc=%.4f",
                 epoch, beta, run["recon"], v["loss"], v["acc"])
        if on_epoch:
            on_epoch(epoch, row)
        if v["loss"] < best_loss:
            best_loss = v["loss"]
            best_state = copy.deepcopy(model.state_dict())
    model.load_state_dict(best_state)
    model.eval()
    return model, history
