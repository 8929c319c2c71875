"""Token-id encoding of GPTL signals for the sequence model."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from ..errors import GptlSyntaxError, TooLong
from ..lang.ast import Node
from ..lang.parser import parse_tokens
from ..lang.tokens import EOS, PAD, SOS, UNK, Token, vocabulary

PAD_ID = 0
SOS_ID = 1
EOS_ID = 2
UNK_ID = 3

_VOCAB = vocabulary()
_ID = {tok: i for i, tok in enumerate(_VOCAB)}
assert _VOCAB[PAD_ID] == PAD and _VOCAB[SOS_ID] == SOS and _VOCAB[EOS_ID] == EOS and _VOCAB[UNK_ID] == UNK

VOCAB_SIZE = len(_VOCAB)


def token_ids(node: Node) -> list[int]:
    """Unframed ids of a signal's canonical token sequence."""
    return [_ID[t] for t in node.tokens()]


def tokenize(node: Node, max_seq_len: int = 96) -> tuple[np.ndarray, np.ndarray]:
    """SOS/EOS-framed ids padded to ``max_seq_len`` and the non-pad mask."""
    ids = [SOS_ID] + token_ids(node) + [EOS_ID]
    if len(ids) > max_seq_len:
        raise TooLong(f"{len(ids)} tokens exceed max_seq_len={max_seq_len}")
    out = np.full(max_seq_len, PAD_ID, dtype=np.int64)
    out[: len(ids)] = ids
    mask = np.zeros(max_seq_len, dtype=bool)
    mask[: len(ids)] = True
    return out, mask


def ids_to_tokens(ids: Sequence[int]) -> list[Token]:
    """Content tokens up to the first EOS; SOS/PAD are dropped."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            break
        if i in (SOS_ID, PAD_ID):
            continue
        out.append(_VOCAB[i] if 0 <= i < VOCAB_SIZE else UNK)
    return out


def detokenize(ids: Sequence[int], max_depth: int = 8) -> Node:
    toks = ids_to_tokens(ids)
    if any(t == UNK for t in toks):
        raise GptlSyntaxError("sequence contains <UNK>")
    return parse_tokens(toks, max_depth=max_depth)
