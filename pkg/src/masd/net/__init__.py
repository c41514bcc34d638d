"""Differentiable brain model: autodiff engine, dual-branch extractor, head."""

from .autodiff import Tensor, backward
from .model import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    ForwardOut,
    Model,
    ModelConfig,
    load_checkpoint,
    save_checkpoint,
)

__all__ = [
    "Tensor",
    "backward",
    "Model",
    "ModelConfig",
    "ForwardOut",
    "save_checkpoint",
    "load_checkpoint",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
]
