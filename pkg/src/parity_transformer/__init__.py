"""Softmax-transformer inference with explicit PARITY and majority constructions."""

__version__ = "0.1.0"

from .backend import DOUBLE, PrecisionConfig
from .engine import (
    evaluate_batch,
    evaluate_bits,
    head_value,
    last_position_state,
    layer_forward,
    output_logits,
    stable_softmax,
    trace_last_position,
    transformer_forward,
)
from .errors import (
    BuildError,
    CalibrationError,
    DimensionError,
    InvalidInputError,
    NotBooleanError,
    ParityTransformerError,
    PrecisionError,
    RangeError,
)
from .model import BOT, AttentionLayerParams, EmbeddingSpec, TransformerModel, random_model

__all__ = [
    "BOT", "DOUBLE", "AttentionLayerParams", "BuildError", "CalibrationError", "DimensionError",
    "EmbeddingSpec", "InvalidInputError", "NotBooleanError", "ParityTransformerError", "PrecisionConfig",
    "PrecisionError", "RangeError", "TransformerModel", "evaluate_batch", "evaluate_bits", "head_value",
    "last_position_state", "layer_forward", "output_logits", "random_model", "stable_softmax",
    "trace_last_position", "transformer_forward",
]
