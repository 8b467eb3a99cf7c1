"""Latent-duration sequence-to-sequence modeling at desk scale."""

from .core_types import (BLANK, SHIFT, Alignment, Codebook, DurationSequence, FrameSequence,
                         InfeasibleError, LossBreakdown, ModelParams, TokenSequence, TrainConfig,
                         ValidationError, validate_duration)

__version__ = "0.1.0"

__all__ = ["BLANK", "SHIFT", "Alignment", "Codebook", "DurationSequence", "FrameSequence",
           "InfeasibleError", "LossBreakdown", "ModelParams", "TokenSequence", "TrainConfig",
           "ValidationError", "validate_duration"]
