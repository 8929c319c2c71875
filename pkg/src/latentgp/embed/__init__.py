from .codec import (
    DecodeFailure, decode_batch, decode_greedy, decode_tokens, encode, encode_many,
    encode_stats, load_checkpoint, save_checkpoint,
)
from .dataset import ProgramDataset, build_dataset
from .metrics import latent_quality_report
from .model import ProgramVAE, VaeConfig
from .tokenizer import detokenize, tokenize
from .train import TrainConfig, train_vae

__all__ = [
    "DecodeFailure", "ProgramDataset", "ProgramVAE", "TrainConfig", "VaeConfig",
    "build_dataset", "decode_batch", "decode_greedy", "decode_tokens", "detokenize",
    "encode", "encode_many", "encode_stats", "latent_quality_report", "load_checkpoint",
    "save_checkpoint", "tokenize", "train_vae",
]
