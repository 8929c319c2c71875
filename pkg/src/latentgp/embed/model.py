"""Block-factorized transformer VAE over GPTL signals.

One shared encoder maps each signal's token sequence to a diagonal
Gaussian; the four per-signal latents concatenate to the strategy latent
in block order [LE, SE, LX, SX]. One shared autoregressive decoder is run
per signal with only that signal's block as conditioning (a single-token
cross-attention memory, also added to every input embedding), so decoding
signal k can never read another block.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .tokenizer import EOS_ID, PAD_ID, SOS_ID, VOCAB_SIZE


@dataclass(frozen=True)
class VaeConfig:
    d_model: int = 128
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    n_heads: int = 4
    ff_dim: int = 256
    dropout: float = 0.1
    d_sig: int = 32
    max_seq_len: int = 96
    vocab_size: int = VOCAB_SIZE

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.d_sig < 1:
            raise ValueError("d_sig must be >= 1")

    @property
    def latent_dim(self) -> int:
        return 4 * self.d_sig

    @classmethod
    def full_scale(cls) -> "VaeConfig":
        """Full-size architecture (d_model 512, 4+4 layers)."""
        return cls(d_model=512, n_enc_layers=4, n_dec_layers=4, n_heads=8, ff_dim=1024)

    def to_dict(self) -> dict:
        return asdict(self)


def sinusoidal_positions(n: int, d: int) -> torch.Tensor:
    pos = torch.arange(n, dtype=torch.float32).unsqueeze(1)
    div = torch.exp(torch.arange(0, d, 2, dtype=torch.float32) * (-math.log(10000.0) / d))
    pe = torch.zeros(n, d)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)
    return pe


class Attention(nn.Module):
    def __init__(self, d: int, heads: int, dropout: float):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(d, d)
        self.k = nn.Linear(d, d)
        self.v = nn.Linear(d, d)
        self.out = nn.Linear(d, d)
        self.dropout = dropout

    def split(self, x):
        b, n, d = x.shape
        return x.view(b, n, self.heads, d // self.heads).transpose(1, 2)

    def forward(self, x, kv=None, mask=None, cache=None, is_causal=False):
        """``mask``: bool (b, 1, nq, nk), True = may attend. ``cache``: dict for incremental self-attention."""
        src = x if kv is None else kv
        q = self.split(self.q(x))
        k = self.split(self.k(src))
        v = self.split(self.v(src))
        if cache is not None:
            if "k" in cache:
                k = torch.cat([cache["k"], k], dim=2)
                v = torch.cat([cache["v"], v], dim=2)
            cache["k"], cache["v"] = k, v
        y = F.scaled_dot_product_attention(
            q, k, v, attn_mask=mask, is_causal=is_causal,
            dropout_p=self.dropout if self.training else 0.0,
        )
        b, h, n, dk = y.shape
        return self.out(y.transpose(1, 2).reshape(b, n, h * dk))


class FeedForward(nn.Sequential):
    def __init__(self, d: int, ff: int, dropout: float):
        super().__init__(nn.Linear(d, ff), nn.GELU(), nn.Dropout(dropout), nn.Linear(ff, d))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.attn = Attention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, mask):
        x = x + self.drop(self.attn(self.ln1(x), mask=mask))
        return x + self.drop(self.ff(self.ln2(x)))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.ln1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = Attention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = Attention(cfg.d_model, cfg.n_heads, cfg.dropout)
        self.ln3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.ff_dim, cfg.dropout)
        self.drop = nn.Dropout(cfg.dropout)

    def forward(self, x, memory, cache=None):
        causal = cache is None
        x = x + self.drop(self.self_attn(self.ln1(x), cache=cache, is_causal=causal))
        x = x + self.drop(self.cross_attn(self.ln2(x), kv=memory))
        return x + self.drop(self.ff(self.ln3(x)))


class ProgramVAE(nn.Module):
    def __init__(self, cfg: VaeConfig):
        super().__init__()
        self.cfg = cfg
        d = cfg.d_model
        self.embed = nn.Embedding(cfg.vocab_size, d, padding_idx=PAD_ID)
        # unit-scale after the sqrt(d) multiplier, comparable to the positional code
        nn.init.normal_(self.embed.weight, std=d ** -0.5)
        with torch.no_grad():
            self.embed.weight[PAD_ID].zero_()
        self.register_buffer("pe", sinusoidal_positions(cfg.max_seq_len + 1, d), persistent=False)
        self.enc_layers = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(d)
        self.to_stats = nn.Linear(d, 2 * cfg.d_sig)
        self.from_latent = nn.Linear(cfg.d_sig, d)
        self.dec_layers = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, cfg.vocab_size)
        self.drop = nn.Dropout(cfg.dropout)

    def _embed(self, ids, offset=0):
        n = ids.shape[1]
        return self.drop(self.embed(ids) * math.sqrt(self.cfg.d_model) + self.pe[offset:offset + n])

    def encode(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-sequence (mu, logvar), each (b, d_sig). ``mask`` marks non-pad tokens."""
        x = self._embed(ids)
        attn = mask[:, None, None, :]
        for layer in self.enc_layers:
            x = layer(x, attn)
        x = self.enc_norm(x)
        m = mask.unsqueeze(-1).to(x.dtype)
        pooled = (x * m).sum(1) / m.sum(1)
        mu, logvar = self.to_stats(pooled).chunk(2, dim=-1)
        return mu, logvar

    def memory(self, z: torch.Tensor) -> torch.Tensor:
        return self.from_latent(z).unsqueeze(1)

    def decode_logits(self, z: torch.Tensor, dec_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits for decoder inputs ``dec_in`` (b, n) given blocks ``z`` (b, d_sig)."""
        mem = self.memory(z)
        x = self._embed(dec_in) + mem
        for layer in self.dec_layers:
            x = layer(x, mem)
        return self.head(self.dec_norm(x))

    @torch.no_grad()
    def greedy(self, z: torch.Tensor, max_len: int | None = None) -> list[list[int]]:
        """Greedy decode of each row of ``z``; returns content ids ending at EOS if emitted.

        All rows are stepped together until every row has emitted EOS so that
        each row's computation never depends on which other rows are present.
        """
        max_len = max_len or self.cfg.max_seq_len
        b = z.shape[0]
        mem = self.memory(z)
        caches = [{} for _ in self.dec_layers]
        tok = torch.full((b, 1), SOS_ID, dtype=torch.long)
        out = [[] for _ in range(b)]
        done = torch.zeros(b, dtype=torch.bool)
        for step in range(max_len - 1):
            x = self._embed(tok, offset=step) + mem
            for layer, cache in zip(self.dec_layers, caches):
                x = layer(x, mem, cache=cache)
            logits = self.head(self.dec_norm(x[:, -1]))
            nxt = logits.argmax(-1)
            for i in torch.nonzero(~done).flatten().tolist():
                out[i].append(int(nxt[i]))
            done |= nxt == EOS_ID
            if bool(done.all()):
                break
            tok = nxt.unsqueeze(1)
        return out


def kl_divergence(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """-1/2 E[1 + log s^2 - mu^2 - s^2], averaged over batch and latent dims."""
    return -0.5 * torch.mean(1 + logvar - mu.pow(2) - logvar.exp())
