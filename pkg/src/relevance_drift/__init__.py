"""Detect and explain label-driven concept drift from bagged-tree feature relevance."""

__version__ = "0.1.0"

from .errors import (
    BadArgument,
    BadData,
    ConfigError,
    EmptyInput,
    InsufficientData,
    ProvenanceError,
    RelevanceDriftError,
    SignatureNotFound,
    StateError,
)
from .matrix import FeatureMatrix
from .trees import BaggedTreeModel, RelevanceProfile, TrainConfig, predictor_importance, train
from .fingerprint import DiffProfile, DriftSignature, DriftVerdict, detect_and_explain, relevance_diff

__all__ = [
    "BadArgument", "BadData", "ConfigError", "EmptyInput", "InsufficientData", "ProvenanceError",
    "RelevanceDriftError", "SignatureNotFound", "StateError", "FeatureMatrix", "BaggedTreeModel",
    "RelevanceProfile", "TrainConfig", "predictor_importance", "train", "DiffProfile", "DriftSignature",
    "DriftVerdict", "detect_and_explain", "relevance_diff",
]
