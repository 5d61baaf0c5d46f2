"""Conditional trajectory predictor: features, network, losses, training."""
from .features import ConditionalQuery, SceneEncoding
from .losses import nll_terms, overlap_loss
from .model import nll_loss, predict, predict_many
from .network import ModelConfig, PredictorParams
from .training import TrainConfig, evaluate, train

__all__ = [
    "ConditionalQuery",
    "ModelConfig",
    "PredictorParams",
    "SceneEncoding",
    "TrainConfig",
    "evaluate",
    "nll_loss",
    "nll_terms",
    "overlap_loss",
    "predict",
    "predict_many",
    "train",
]
