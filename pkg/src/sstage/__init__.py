"""Multi-modal pedestrian trajectory forecasting with spatio-temporal graph convolutions."""

from .data import T_IN, T_OUT, Scene, load_set, parse_annotations
from .graph import build as build_graph
from .losses import total_loss
from .metrics import MetricsReport, ade, fde, m1, m2
from .model import STAGE, ModelConfig, PredictionSet, load_checkpoint, save_checkpoint
from .trainer import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "MetricsReport", "ModelConfig", "PredictionSet", "STAGE", "Scene", "T_IN", "T_OUT", "TrainConfig",
    "ade", "build_graph", "fde", "load_checkpoint", "load_set", "m1", "m2", "parse_annotations",
    "save_checkpoint", "total_loss", "train",
]
