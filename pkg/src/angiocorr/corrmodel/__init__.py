"""Point-to-point and curve-to-curve correspondence transformers."""

from .config import ModelConfig, TrainConfig, QueryBatch
from .model import CorrespondenceModel, positional_encoding, positional_encoding_np
from .losses import (
    chamfer_loss,
    control_point_loss_batch,
    loss_corr,
    loss_cycle_point,
    loss_curve,
    sample_curves,
)
from .checkpoint import Checkpoint, load_checkpoint, load_model, save_checkpoint
from .train import train
from .infer import Predictor, infer_c2c, infer_c2c_refined, infer_p2p

__all__ = [
    "ModelConfig",
    "TrainConfig",
    "QueryBatch",
    "CorrespondenceModel",
    "positional_encoding",
    "positional_encoding_np",
    "loss_corr",
    "loss_cycle_point",
    "loss_curve",
    "chamfer_loss",
    "control_point_loss_batch",
    "sample_curves",
    "Checkpoint",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
    "train",
    "Predictor",
    "infer_p2p",
    "infer_c2c",
    "infer_c2c_refined",
]
