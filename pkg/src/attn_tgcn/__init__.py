"""Attention temporal graph convolutional network for per-cell death classification."""

from .data import (
    ModelArchive,
    SynthConfig,
    generate_synthetic,
    label_from_markers,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)
from .estimator import AttentionTGCNClassifier, check_sequences
from .graph import (
    NormalizedAdjacency,
    STGraphSequence,
    build_fully_connected,
    normalize_adjacency,
    pad_sequence,
    validate_sequence,
)
from .metrics import UNDEFINED, MetricsReport, NodeConfusion, evaluate, finalize, hard_decision
from .model import ModelConfig, ModelParams, Prediction, forward, init_params
from .training import TrainConfig, grad_check_model, sequence_loss, train

__version__ = "0.1.0"

__all__ = [
    "AttentionTGCNClassifier",
    "MetricsReport",
    "ModelArchive",
    "ModelConfig",
    "ModelParams",
    "NodeConfusion",
    "NormalizedAdjacency",
    "Prediction",
    "STGraphSequence",
    "SynthConfig",
    "TrainConfig",
    "UNDEFINED",
    "build_fully_connected",
    "check_sequences",
    "evaluate",
    "finalize",
    "forward",
    "generate_synthetic",
    "grad_check_model",
    "hard_decision",
    "init_params",
    "label_from_markers",
    "load_model",
    "normalize_adjacency",
    "pad_sequence",
    "read_dataset",
    "save_model",
    "sequence_loss",
    "train",
    "validate_sequence",
    "write_dataset",
]
