"""Hybrid interleaved text / multi-codebook speech sequence toolkit."""

from .delay_pattern import DelayGrid, apply_delay, delayed_column, invert_delay
from .hybrid_loss import PositionPrediction, build_response_mask, hybrid_nll
from .interleaver import InterleaveConfig, check_schedule, deinterleave, interleave, modality_at
from .token_space import AudioFrame, Text, VocabSpec, from_unified_head0, to_unified_head0, validate

__version__ = "0.1.0"

__all__ = [
    "AudioFrame",
    "DelayGrid",
    "InterleaveConfig",
    "PositionPrediction",
    "Text",
    "VocabSpec",
    "apply_delay",
    "build_response_mask",
    "check_schedule",
    "deinterleave",
    "delayed_column",
    "from_unified_head0",
    "hybrid_nll",
    "interleave",
    "invert_delay",
    "modality_at",
    "to_unified_head0",
    "validate",
]
