"""Stability-diversity balanced decision operator for instruction-conditioned navigation."""

from .core import DecisionContext, ModelConfig, TokenMatrix, masked_pool
from .model import SDBPolicy
from .training import TrainConfig, train
from .world import WorldConfig

__all__ = [
    "DecisionContext",
    "ModelConfig",
    "SDBPolicy",
    "TokenMatrix",
    "TrainConfig",
    "WorldConfig",
    "masked_pool",
    "train",
]
