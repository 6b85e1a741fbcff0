from .core import (
    ChannelKind,
    ConfigurationError,
    FieldFrame,
    FlowField,
    NormStats,
    RegionKind,
    RegionMask,
    SampleSequence,
)
from .losses import LossReport, LossWeights, total_loss
from .model import HOSSNet, ModelConfig, build_model

__all__ = [
    "ChannelKind",
    "ConfigurationError",
    "FieldFrame",
    "FlowField",
    "HOSSNet",
    "LossReport",
    "LossWeights",
    "ModelConfig",
    "NormStats",
    "RegionKind",
    "RegionMask",
    "SampleSequence",
    "build_model",
    "total_loss",
]
