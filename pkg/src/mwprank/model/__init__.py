"""Trainable encoder-decoder with generation and ranking heads."""

from .autodiff import Tensor, no_grad
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .infer import IncrementalDecoder
from .network import (
    GradientBundle,
    ModelConfig,
    ModelParams,
    decode_step,
    encode,
    generation_loss,
    rank_score,
    rank_scores,
    ranking_loss,
)
from .optim import AdamWState, OptimizerConfig, adamw_update, joint_step, lr_at
from .vocab import BOS, EOS, PAD, UNK, Vocab

__all__ = [
    "AdamWState",
    "BOS",
    "Checkpoint",
    "EOS",
    "GradientBundle",
    "IncrementalDecoder",
    "ModelConfig",
    "ModelParams",
    "OptimizerConfig",
    "PAD",
    "Tensor",
    "UNK",
    "Vocab",
    "adamw_update",
    "decode_step",
    "encode",
    "generation_loss",
    "joint_step",
    "load_checkpoint",
    "lr_at",
    "no_grad",
    "rank_score",
    "rank_scores",
    "ranking_loss",
    "save_checkpoint",
]
