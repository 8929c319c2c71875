"""Latent-space quality metrics for a trained program VAE."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..lang.ast import Strategy
from ..lang.distance import token_edit_distance
from .codec import DecodeFailure, decode_batch, decode_tokens, encode_many
from .model import ProgramVAE
from .tokenizer import EOS_ID, token_ids


def _content(ids: Sequence[int]) -> list[int]:
    ids = list(ids)
    return ids[: ids.index(EOS_ID)] if EOS_ID in ids else ids


def uniqueness(decoded: Sequence[Strategy]) -> float:
    """Distinct programs over valid samples; 0 when there are none."""
    return len(set(decoded)) / len(decoded) if decoded else 0.0


def reconstruction_metrics(model: ProgramVAE, strategies: Sequence[Strategy], batch: int = 64) -> dict:
    """Exact four-signal match rate and mean normalized token edit distance."""
    exact, dist = 0, 0.0
    for i in range(0, len(strategies), batch):
        chunk = list(strategies[i:i + batch])
        rows = decode_tokens(model, encode_many(chunk, model))
        for s, got in zip(chunk, rows):
            d = [token_edit_distance(token_ids(sig), _content(ids)) for sig, ids in zip(s.signals, got)]
            exact += all(x == 0 for x in d)
            dist += sum(d) / 4.0
    n = max(len(strategies), 1)
    return {"recon_acc": exact / n, "norm_edit_dist": dist / n}


def prior_metrics(model: ProgramVAE, n_samples: int, train_set: set, seed: int = 0) -> dict:
    """Validity, uniqueness, novelty and decode consistency of N(0, I) samples."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, model.cfg.latent_dim))
    first = decode_batch(model, z)
    second = decode_batch(model, z)
    valid = [s for s in first if not isinstance(s, DecodeFailure)]
    same = sum(
        (isinstance(a, DecodeFailure) and isinstance(b, DecodeFailure) and a.tokens == b.tokens)
        or a == b
        for a, b in zip(first, second)
    )
    return {
        "validity": len(valid) / n_samples if n_samples else 0.0,
        "uniqueness": uniqueness(valid),
        "novelty": sum(s not in train_set for s in valid) / len(valid) if valid else 0.0,
        "consistency": same / n_samples if n_samples else 1.0,
        "n_prior_samples": n_samples,
    }


def latent_quality_report(
    model: ProgramVAE,
    strategies: Sequence[Strategy],
    n_prior_samples: int = 500,
    seed: int = 0,
    train_set: Sequence[Strategy] | None = None,
) -> dict:
    """Reconstruction metrics on ``strategies`` plus prior-sample metrics.

    Novelty is measured against ``train_set`` (defaults to ``strategies``).
    """
    out = reconstruction_metrics(model, strategies)
    known = set(train_set if train_set is not None else strategies)
    out.update(prior_metrics(model, n_prior_samples, known, seed))
    out["n_strategies"] = len(strategies)
    return out
