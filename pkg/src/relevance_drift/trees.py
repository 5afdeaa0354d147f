"""Bootstrap-aggregated CART classifier with impurity-based predictor importance.

Importance follows the risk-change convention: for every branch node the
drop in node risk (node probability times Gini impurity) is credited to the
split feature, each tree's totals are divided by that tree's branch-node
count, and the per-tree vectors are averaged over the ensemble.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _cart
from ._seeding import derive_seed
from .errors import BadArgument, BadData, EmptyInput
from .matrix import FeatureMatrix

MODEL_FORMAT = "relevance_drift.bagged_trees"
MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 50
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    min_leaf: int = 1
    max_depth: int | None = None
    bootstrap: bool = True

    def resolved_mtry(self, d: int) -> int:
        if self.features_per_split is None:
            return max(1, math.ceil(math.sqrt(d)))
        return max(1, min(int(self.features_per_split), d))

    @classmethod
    def from_dict(cls, data: dict | None) -> "TrainConfig":
        return cls(**(data or {}))


@dataclass
class Tree:
    """One CART tree as parallel node arrays (leaf iff ``feature == -1``)."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    counts: np.ndarray  # per-node class counts of the (bootstrap) training rows

    @property
    def n_nodes(self) -> int:
        return int(self.feature.shape[0])

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature == _cart.LEAF

    @property
    def n_branches(self) -> int:
        return int(np.count_nonzero(~self.is_leaf))

    @property
    def node_size(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def node_probability(self) -> np.ndarray:
        size = self.node_size
        return size / size[0]

    @property
    def gini(self) -> np.ndarray:
        size = self.node_size
        p = self.counts / size[:, None]
        return 1.0 - np.sum(p * p, axis=1)

    @property
    def node_risk(self) -> np.ndarray:
        return self.node_probability * self.gini

    @property
    def posteriors(self) -> np.ndarray:
        return self.counts / self.node_size[:, None]

    def apply(self, X: np.ndarray) -> np.ndarray:
        return _cart.apply_tree(self.feature, self.threshold, self.left, self.right, X)

    def risk_decrease(self) -> np.ndarray:
        """Per-node risk drop, zero on leaves."""
        risk = self.node_risk
        out = np.zeros(self.n_nodes)
        br = np.flatnonzero(~self.is_leaf)
        out[br] = risk[br] - risk[self.left[br]] - risk[self.right[br]]
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "counts": self.counts.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict, n_classes: int) -> "Tree":
        return cls(
            feature=np.asarray(data["feature"], dtype=np.int64),
            threshold=np.asarray(data["threshold"], dtype=np.float64),
            left=np.asarray(data["left"], dtype=np.int64),
            right=np.asarray(data["right"], dtype=np.int64),
            counts=np.asarray(data["counts"], dtype=np.float64).reshape(-1, n_classes),
        )


@dataclass
class RelevanceProfile:
    values: np.ndarray
    feature_names: list[str]
    model_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or len(self.feature_names) != self.values.shape[0]:
            raise BadArgument("relevance values and feature names must align")

    def __len__(self):
        return self.values.shape[0]

    def to_dict(self) -> dict:
        return {"model_id": self.model_id, "feature_names": list(self.feature_names), "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "RelevanceProfile":
        return cls(np.asarray(data["values"], dtype=np.float64), list(data["feature_names"]), data.get("model_id", ""))


@dataclass
class BaggedTreeModel:
    trees: list[Tree]
    n_features: int
    class_count: int
    seed: int
    config: TrainConfig = field(default_factory=TrainConfig)
    feature_names: list[str] = field(default_factory=list)

    @property
    def model_id(self) -> str:
        h = hashlib.sha1()
        h.update(f"{self.seed}:{self.n_features}:{self.class_count}".encode())
        for t in self.trees:
            for arr in (t.feature, t.threshold, t.counts):
                h.update(np.ascontiguousarray(arr).tobytes())
        return "bag-" + h.hexdigest()[:16]

    def predict_proba(self, X) -> np.ndarray:
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise BadArgument(f"expected {self.n_features} features, got {X.shape[1]}")
        acc = np.zeros((X.shape[0], self.class_count))
        for t in self.trees:
            acc += t.posteriors[t.apply(X)]
        return acc / len(self.trees)

    def predict_labels(self, X) -> np.ndarray:
        # np.argmax returns the first maximum, i.e. the lowest class id on ties
        return np.argmax(self.predict_proba(X), axis=1)

    def predict(self, x) -> tuple[int, np.ndarray]:
        """Classify one feature vector; returns ``(class_id, posteriors)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise BadArgument("predict expects a single feature vector")
        post = self.predict_proba(x)[0]
        return int(np.argmax(post)), post

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "seed": self.seed,
            "n_features": self.n_features,
            "class_count": self.class_count,
            "feature_names": list(self.feature_names),
            "config": asdict(self.config),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BaggedTreeModel":
        if data.get("format") != MODEL_FORMAT or data.get("version") != MODEL_FORMAT_VERSION:
            raise BadData("unrecognised model document")
        C = int(data["class_count"])
        return cls(
            trees=[Tree.from_dict(t, C) for t in data["trees"]],
            n_features=int(data["n_features"]),
            class_count=C,
            seed=int(data["seed"]),
            config=TrainConfig(**data["config"]),
            feature_names=list(data["feature_names"]),
        )

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "BaggedTreeModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_tree(X: np.ndarray, y: np.ndarray, n_classes: int, max_features: int, min_leaf: int = 1,
             max_depth: int | None = None, seed: int = 0) -> Tree:
    f, thr, left, right, counts, _ = _cart.build_tree(
        np.ascontiguousarray(X, dtype=np.float64),
        np.ascontiguousarray(y, dtype=np.int64),
        int(n_classes),
        int(max_features),
        int(min_leaf),
        -1 if max_depth is None else int(max_depth),
        int(seed),
    )
    return Tree(f, thr, left, right, counts)


def train(m: FeatureMatrix, cfg: TrainConfig | None = None, seed: int = 0,
          n_classes: int | None = None) -> BaggedTreeModel:
    """Fit ``cfg.n_trees`` CART trees on n-of-n bootstrap resamples of ``m``.

    Tree ``t`` draws its bootstrap and its feature subsets from a substream
    keyed by ``(seed, t)``, so the result does not depend on build order.
    """
    cfg = cfg or TrainConfig()
    if m.n_rows == 0:
        raise EmptyInput("cannot train on an empty feature matrix")
    m.ensure_trainable("bagged-tree training")
    if not np.all(np.isfinite(m.X)):
        raise BadData("feature matrix contains NaN or Inf")
    if cfg.n_trees < 1 or cfg.min_leaf < 1:
        raise BadArgument("n_trees and min_leaf must be positive")
    C = int(n_classes) if n_classes is not None else int(m.labels.max()) + 1
    if m.labels.max() >= C:
        raise BadData("label outside class range")
    X = np.ascontiguousarray(m.X)
    y = m.labels
    n, d = X.shape
    mtry = cfg.resolved_mtry(d)
    trees = []
    for t in range(cfg.n_trees):
        rng = np.random.default_rng(derive_seed(seed, "tree", t))
        rows = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        tree_seed = int(rng.integers(0, 2**31 - 1))
        trees.append(fit_tree(X[rows], y[rows], C, mtry, cfg.min_leaf, cfg.max_depth, tree_seed))
    return BaggedTreeModel(trees, d, C, int(seed), cfg, list(m.feature_names))


def predictor_importance(model: BaggedTreeModel) -> RelevanceProfile:
    """Mean over trees of (risk drop per feature / number of branch nodes)."""
    total = np.zeros(model.n_features)
    for t in model.trees:
        nb = t.n_branches
        if nb == 0:
            continue
        br = np.flatnonzero(~t.is_leaf)
        per_tree = np.zeros(model.n_features)
        np.add.at(per_tree, t.feature[br], t.risk_decrease()[br])
        total += per_tree / nb
    names = list(model.feature_names) or [f"f{i}" for i in range(model.n_features)]
    return RelevanceProfile(total / len(model.trees), names, model.model_id)
