"""Toy amortised SEU: a GRU language model with a latent semantic head."""

from .model import LatentPosterior, ModelParams, ToyLmConfig, elbo_loss, gaussian_kl, init_params
from .scoring import AseuResult, ScoringConfig, score_sequence
from .train import TrainResult, load_checkpoint, save_checkpoint, train

__all__ = [
    "AseuResult",
    "LatentPosterior",
    "ModelParams",
    "ScoringConfig",
    "ToyLmConfig",
    "TrainResult",
    "elbo_loss",
    "gaussian_kl",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "score_sequence",
    "train",
]
