"""Minimal float64 neural-network core with analytic gradients."""

from . import kernels
from .checkpoint import (
    CheckpointError,
    CheckpointVersionMismatch,
    load_checkpoint,
    save_checkpoint,
)
from .gradcheck import grad_check
from .layers import (
    BCELossHead,
    Conv2d,
    EmbeddingBag,
    Layer,
    Linear,
    MaxPool2,
    ReLU,
    Sequential,
    ShapeMismatch,
    Sigmoid,
    SquaredLossHead,
    Upsample2,
    cross_entropy_rows,
    forward_backward,
    he_uniform,
    softmax_rows,
)
from .optim import Adam, AdamConfig

__all__ = [
    "Adam",
    "AdamConfig",
    "BCELossHead",
    "CheckpointError",
    "CheckpointVersionMismatch",
    "Conv2d",
    "EmbeddingBag",
    "Layer",
    "Linear",
    "MaxPool2",
    "ReLU",
    "Sequential",
    "ShapeMismatch",
    "Sigmoid",
    "SquaredLossHead",
    "Upsample2",
    "cross_entropy_rows",
    "forward_backward",
    "grad_check",
    "he_uniform",
    "kernels",
    "load_checkpoint",
    "save_checkpoint",
    "softmax_rows",
]
