"""Conditional behavior prediction with a mutual-information interactivity score."""
from .errors import ConfigError, DimensionError, NumericDomainError, TrainingError
from .interactivity import InteractivityReport, delta_ll, kl_mc, mutual_information, pairwise_scores
from .metrics import MetricSummary, aggregate, delta_wade, min_ade6, wade6
from .predictor import ConditionalQuery, ModelConfig, PredictorParams, TrainConfig, nll_loss, predict, train
from .sim import Scene, SimConfig, generate_dataset, generate_scene
from .trajectory import Trajectory, TrajectoryGMM, log_likelihood, most_likely_modes, sample

__version__ = "0.1.0"
