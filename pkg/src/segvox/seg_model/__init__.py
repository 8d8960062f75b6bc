"""Transformer-encoder frame classifier with hand-derived gradients."""

from segvox.seg_model.checkpoint import load_checkpoint, save_checkpoint
from segvox.seg_model.config import ModelConfig, OptimizerConfig, output_length
from segvox.seg_model.model import (
    Batch,
    LabelProbabilities,
    ModelParams,
    forward,
    init_params,
    loss_and_gradients,
    make_batch,
    seg_loss,
)
from segvox.seg_model.train import TrainResult, average_best, average_params, train

__all__ = [
    "Batch", "LabelProbabilities", "ModelConfig", "ModelParams", "OptimizerConfig",
    "TrainResult", "average_best", "average_params", "forward", "init_params",
    "load_checkpoint", "loss_and_gradients", "make_batch", "output_length",
    "save_checkpoint", "seg_loss", "train",
]
