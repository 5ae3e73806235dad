"""Contrastive predictive coding for raw speech with slowness regularizers."""

from .config import AugmentConfig, ModelConfig, RegConfig, TrainConfig
from .losses import cpc_loss, lorr_loss, se_loss, total_loss
from .model import CPCModel, init_model

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "ModelConfig", "RegConfig", "TrainConfig",
    "cpc_loss", "lorr_loss", "se_loss", "total_loss",
    "CPCModel", "init_model",
]
