"""Prompt-conditioned multichannel speech separation for arbitrary microphone and speaker counts."""

from .channel_comm import CommMechanism
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import (
    ComplexityError,
    ConfigError,
    DataError,
    FlexIOError,
    InvalidInput,
    InvalidTarget,
    TrainingDiverged,
)
from .model import FlexIO, ModelConfig, SeparationResult, preset, separate
from .stft import StftConfig, istft, stft

__all__ = [
    "CommMechanism",
    "ComplexityError",
    "ConfigError",
    "DataError",
    "FlexIO",
    "FlexIOError",
    "InvalidInput",
    "InvalidTarget",
    "ModelConfig",
    "SeparationResult",
    "StftConfig",
    "TrainingDiverged",
    "istft",
    "load_checkpoint",
    "preset",
    "save_checkpoint",
    "separate",
    "stft",
]
