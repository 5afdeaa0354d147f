"""Chunked incremental ensemble in the Learn++ style.

A user-independent model seeds the ensemble. Each incoming chunk is labelled
by the current ensemble (optionally asking a labeler for rows whose maximum
posterior falls below a threshold), a new bagged-tree model is trained on
those labels and appended with a log-odds weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import BadArgument, EmptyInput
from .matrix import FeatureMatrix
from .trees import BaggedTreeModel, TrainConfig, train

ERROR_FLOOR = 1e-6
PURE_SELF_TRAINING = "pure_self_training"
POSTERIOR_GATE = "posterior_gate"

Labeler = Callable[[FeatureMatrix, np.ndarray], np.ndarray]


def ground_truth_labeler(chunk: FeatureMatrix, rows: np.ndarray) -> np.ndarray:
    """Stand-in for a human: return the chunk's stored labels for ``rows``."""
    return chunk.labels[rows]


@dataclass(frozen=True)
class ChunkPolicy:
    kind: str = PURE_SELF_TRAINING
    threshold: float = 0.0
    labeler: Labeler | None = None

    def __post_init__(self):
        if self.kind not in (PURE_SELF_TRAINING, POSTERIOR_GATE):
            raise BadArgument(f"unknown chunk policy {self.kind!r}")
        if self.kind == POSTERIOR_GATE and self.labeler is None:
            raise BadArgument("posterior_gate needs a labeler")

    @classmethod
    def self_training(cls) -> "ChunkPolicy":
        return cls()

    @classmethod
    def posterior_gate(cls, threshold: float, labeler: Labeler = ground_truth_labeler) -> "ChunkPolicy":
        return cls(POSTERIOR_GATE, float(threshold), labeler)


@dataclass
class ChunkResult:
    predicted_labels: np.ndarray
    posteriors: np.ndarray
    queried_mask: np.ndarray
    training_labels: np.ndarray
    new_model_id: str
    weight: float
    error: float

    def __post_init__(self):
        n = self.predicted_labels.shape[0]
        if not (self.posteriors.shape[0] == self.queried_mask.shape[0] == self.training_labels.shape[0] == n):
            raise BadArgument("chunk result arrays must be aligned")

    @property
    def n_queried(self) -> int:
        return int(np.count_nonzero(self.queried_mask))


def learnpp_weight(error: float, floor: float = ERROR_FLOOR) -> float:
    """``log((1 - e) / max(e, floor))`` clamped at zero."""
    e = min(max(float(error), 0.0), 1.0)
    if e >= 1.0:
        return 0.0
    return max(0.0, math.log((1.0 - e) / max(e, floor)))


@dataclass
class EnsembleModel:
    base_models: list[BaggedTreeModel]
    weights: list[float]
    chunk_log: list[dict] = field(default_factory=list)
    uniform_weights: bool = False

    def __post_init__(self):
        if not self.base_models:
            raise BadArgument("an ensemble needs at least one base model")
        if len(self.weights) != len(self.base_models):
            raise BadArgument("one weight per base model required")
        if any(w < 0 for w in self.weights):
            raise BadArgument("weights must be non-negative")
        d = {m.n_features for m in self.base_models}
        c = {m.class_count for m in self.base_models}
        if len(d) != 1 or len(c) != 1:
            raise BadArgument("base models disagree on feature or class count")

    @property
    def n_features(self) -> int:
        return self.base_models[0].n_features

    @property
    def class_count(self) -> int:
        return self.base_models[0].class_count

    def __len__(self):
        return len(self.base_models)

    def effective_weights(self) -> np.ndarray:
        w = np.ones(len(self.base_models)) if self.uniform_weights else np.asarray(self.weights, dtype=np.float64)
        if w.sum() <= 0:
            # every appended model had error >= 0.5; fall back to an even vote
            w = np.ones_like(w)
        return w

    def predict_proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise BadArgument(f"expected {self.n_features} features, got {X.shape[1]}")
        w = self.effective_weights()
        acc = np.zeros((X.shape[0], self.class_count))
        for wi, m in zip(w, self.base_models):
            if wi > 0:
                acc += wi * m.predict_proba(X)
        return acc / w.sum()

    def predict_labels(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def predict(self, x) -> tuple[int, np.ndarray]:
        return ensemble_predict(self, x)

    def append(self, model: BaggedTreeModel, weight: float, log: dict) -> None:
        if model.n_features != self.n_features or model.class_count != self.class_count:
            raise BadArgument("new base model does not match the ensemble")
        self.base_models.append(model)
        self.weights.append(float(weight))
        self.chunk_log.append(dict(log))


def init(user_independent: BaggedTreeModel, uniform_weights: bool = False) -> EnsembleModel:
    return EnsembleModel([user_independent], [1.0], [], uniform_weights)


def ensemble_predict(e: EnsembleModel, x) -> tuple[int, np.ndarray]:
    """Weight-normalised posterior of one vector; ties go to the lowest class id."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise BadArgument("ensemble_predict expects a single feature vector")
    post = e.predict_proba(x)[0]
    return int(np.argmax(post)), post


def label_chunk(e: EnsembleModel, chunk: FeatureMatrix, policy: ChunkPolicy | None = None):
    """Ensemble labels for a chunk, with low-confidence rows sent to the labeler.

    Returns ``(predicted, posteriors, queried_mask, training_labels)``.
    """
    policy = policy or ChunkPolicy()
    if chunk.n_rows == 0:
        raise EmptyInput("empty chunk")
    if chunk.n_features != e.n_features:
        raise BadArgument(f"chunk has {chunk.n_features} features, ensemble expects {e.n_features}")
    post = e.predict_proba(chunk.X)
    predicted = np.argmax(post, axis=1)
    queried = np.zeros(chunk.n_rows, dtype=bool)
    labels = predicted.copy()
    if policy.kind == POSTERIOR_GATE:
        queried = post.max(axis=1) < policy.threshold
        rows = np.flatnonzero(queried)
        if rows.size:
            labels[rows] = np.asarray(policy.labeler(chunk, rows), dtype=np.int64)
    return predicted, post, queried, labels


def train_chunk_model(chunk: FeatureMatrix, labels: np.ndarray, cfg: TrainConfig | None, seed: int,
                      n_classes: int) -> tuple[BaggedTreeModel, float, float]:
    """Fit a base model on ``labels`` and return it with its chunk error and weight."""
    model = train(chunk.with_labels(labels), cfg, seed, n_classes)
    error = float(np.mean(model.predict_labels(chunk.X) != labels))
    return model, error, learnpp_weight(error)


def process_chunk(e: EnsembleModel, chunk: FeatureMatrix, policy: ChunkPolicy | None = None,
                  cfg: TrainConfig | None = None, seed: int = 0, chunk_index: int | None = None) -> ChunkResult:
    """Label ``chunk``, train a new base model on those labels and append it."""
    predicted, post, queried, labels = label_chunk(e, chunk, policy)
    model, error, weight = train_chunk_model(chunk, labels, cfg, seed, e.class_count)
    e.append(model, weight, {
        "chunk": len(e.chunk_log) if chunk_index is None else int(chunk_index),
        "rows": int(chunk.n_rows),
        "self_labelled": int(chunk.n_rows - np.count_nonzero(queried)),
        "user_labelled": int(np.count_nonzero(queried)),
        "model_id": model.model_id,
    })
    return ChunkResult(predicted, post, queried, labels, model.model_id, weight, error)
