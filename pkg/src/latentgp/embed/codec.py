"""Strategy <-> latent conversion on top of a trained :class:`ProgramVAE`."""

from __future__ import annotations

from collections.abc import Sequence
from pathlib import Path

import numpy as np
import torch

from ..errors import CheckpointMismatch, GptlError, TooLong
from ..lang.ast import SIGNALS, Strategy
from ..lang.tokens import vocab_hash
from .model import ProgramVAE, VaeConfig
from .tokenizer import EOS_ID, SOS_ID, detokenize, token_ids

CHECKPOINT_FORMAT = "latentgp-vae/1"


class DecodeFailure(Exception):
    """A latent block decoded to a sequence that does not parse or type-check."""

    def __init__(self, signal: int, reason: str, tokens: Sequence[int] = ()):
        super().__init__(f"{SIGNALS[signal]}: {reason}")
        self.signal = signal
        self.reason = reason
        self.tokens = list(tokens)


def _framed(strategy_signals) -> list[list[int]]:
    return [[SOS_ID] + token_ids(sig) + [EOS_ID] for sig in strategy_signals]


@torch.no_grad()
def encode_signals(model: ProgramVAE, sequences: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (mu, logvar) for framed id sequences.

    Each sequence is encoded on its own, unpadded: CPU matmul results vary
    in the last bits with batch shape, so this is what makes a signal's
    latent independent of padding and of whatever else is being encoded.
    """
    model.eval()
    d = model.cfg.d_sig
    mu = np.empty((len(sequences), d))
    logvar = np.empty((len(sequences), d))
    for i, seq in enumerate(sequences):
        if len(seq) > model.cfg.max_seq_len:
            raise TooLong(f"{len(seq)} tokens exceed max_seq_len={model.cfg.max_seq_len}")
        ids = torch.tensor([list(seq)], dtype=torch.long)
        m, lv = model.encode(ids, torch.ones_like(ids, dtype=torch.bool))
        mu[i] = m[0].double().numpy()
        logvar[i] = lv[0].double().numpy()
    return mu, logvar


def encode(strategy: Strategy, model: ProgramVAE) -> np.ndarray:
    """Posterior-mean strategy latent (length 4*d_sig, blocks LE, SE, LX, SX)."""
    return encode_many([strategy], model)[0]


def encode_stats(strategy: Strategy, model: ProgramVAE) -> tuple[np.ndarray, np.ndarray]:
    """Per-block posterior (mu, logvar), each shaped (4, d_sig)."""
    return encode_signals(model, _framed(strategy.signals))


def encode_many(strategies: Sequence[Strategy], model: ProgramVAE) -> np.ndarray:
    seqs = [seq for s in strategies for seq in _framed(s.signals)]
    mu, _ = encode_signals(model, seqs)
    return mu.reshape(len(strategies), -1)


@torch.no_grad()
def decode_block_tokens(model: ProgramVAE, blocks: np.ndarray) -> list[list[int]]:
    """Raw greedy token ids for each row of ``blocks`` (n, d_sig)."""
    model.eval()
    z = torch.as_tensor(np.asarray(blocks, dtype=np.float32))
    return model.greedy(z)


def _to_strategy(token_rows: Sequence[Sequence[int]], max_depth: int) -> Strategy | DecodeFailure:
    sigs = []
    for k, ids in enumerate(token_rows):
        if not ids or ids[-1] != EOS_ID:
            return DecodeFailure(k, "no EOS within max_seq_len", ids)
        try:
            sigs.append(detokenize(ids, max_depth=max_depth))
        except GptlError as exc:
            return DecodeFailure(k, f"{type(exc).__name__}: {exc}", ids)
    return Strategy(*sigs)


def decode_tokens(model: ProgramVAE, latents: np.ndarray, chunk: int = 256) -> list[list[list[int]]]:
    """Raw decoded ids per strategy and signal for latents shaped (n, 4*d_sig).

    Rows decode independently, so chunking only bounds memory.
    """
    latents = np.atleast_2d(np.asarray(latents, dtype=float))
    if not np.all(np.isfinite(latents)):
        raise ValueError("latent contains non-finite values")
    n = len(latents)
    blocks = latents.reshape(n * 4, model.cfg.d_sig)
    rows = []
    for i in range(0, len(blocks), 4 * chunk):
        rows.extend(decode_block_tokens(model, blocks[i:i + 4 * chunk]))
    return [rows[4 * i: 4 * i + 4] for i in range(n)]


def decode_batch(model: ProgramVAE, latents: np.ndarray, max_depth: int = 8) -> list[Strategy | DecodeFailure]:
    """Greedy-decode many latents; failures are returned in place, never raised."""
    return [_to_strategy(rows, max_depth) for rows in decode_tokens(model, latents)]


def decode_greedy(z: np.ndarray, model: ProgramVAE, max_depth: int = 8) -> Strategy:
    """Greedy-decode one strategy latent. Raises :class:`DecodeFailure`."""
    out = decode_batch(model, np.asarray(z)[None, :], max_depth=max_depth)[0]
    if isinstance(out, DecodeFailure):
        raise out
    return out


# -- checkpoints ----------------------------------------------------------

def save_checkpoint(model: ProgramVAE, path: str | Path, extra: dict | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "vae_config": model.cfg.to_dict(),
        "vocab_hash": vocab_hash(),
        "state_dict": {k: v.detach().clone() for k, v in model.state_dict().items()},
        "extra": extra or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[ProgramVAE, dict]:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointMismatch(f"{path} is not a VAE checkpoint")
    if payload["vocab_hash"] != vocab_hash():
        raise CheckpointMismatch("checkpoint vocabulary hash does not match this build")
    model = ProgramVAE(VaeConfig(**payload["vae_config"]))
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["extra"]
