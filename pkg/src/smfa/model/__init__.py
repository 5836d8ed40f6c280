"""Desk-scale bimodal model: config, weights, forward/predict, persistence."""

from .checkpoint import (
    LoadedCheckpoint,
    file_digest,
    load_checkpoint,
    save_checkpoint,
    save_delta,
    save_mask,
    save_weights,
    weights_digest,
)
from .network import (
    PAD_TOKEN,
    DeltaAdapter,
    DeltaMeta,
    LowRankAdapter,
    ModelConfig,
    ModelWeights,
    apply_delta,
    expand_lowrank,
    forward,
    forward_batch,
    init_model,
    predict_answer,
    predict_batch,
)

__all__ = [
    "PAD_TOKEN",
    "DeltaAdapter",
    "DeltaMeta",
    "LoadedCheckpoint",
    "LowRankAdapter",
    "ModelConfig",
    "ModelWeights",
    "apply_delta",
    "expand_lowrank",
    "file_digest",
    "forward",
    "forward_batch",
    "init_model",
    "load_checkpoint",
    "predict_answer",
    "predict_batch",
    "save_checkpoint",
    "save_delta",
    "save_mask",
    "save_weights",
    "weights_digest",
]
