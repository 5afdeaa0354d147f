"""Greedy sequential forward feature selection."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ._seeding import derive_seed
from .errors import BadArgument
from .matrix import FeatureMatrix
from .trees import TrainConfig, train


@dataclass(frozen=True)
class SFSConfig:
    k: int = 20
    folds: int = 3
    n_trees: int = 8
    max_rows: int | None = 600  # stratified subsample for the CV evaluator
    seed: int = 0


def stratified_folds(labels: np.ndarray, n_folds: int, seed: int) -> np.ndarray:
    """Fold id per row; each class is shuffled and dealt round-robin."""
    rng = np.random.default_rng(derive_seed(seed, "folds"))
    fold = np.empty(labels.shape[0], dtype=np.int64)
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        rows = rows[rng.permutation(rows.size)]
        fold[rows] = np.arange(rows.size) % n_folds
    return fold


def stratified_subsample(labels: np.ndarray, max_rows: int, seed: int) -> np.ndarray:
    if labels.shape[0] <= max_rows:
        return np.arange(labels.shape[0])
    rng = np.random.default_rng(derive_seed(seed, "subsample"))
    keep = []
    frac = max_rows / labels.shape[0]
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        keep.append(rng.choice(rows, size=max(1, int(round(frac * rows.size))), replace=False))
    return np.sort(np.concatenate(keep))


def cv_accuracy_evaluator(cfg: SFSConfig, n_classes: int | None = None) -> Callable[[np.ndarray, np.ndarray], float]:
    """Mean stratified k-fold accuracy of a small seeded bagged-tree model."""

    def evaluate(X: np.ndarray, y: np.ndarray) -> float:
        C = n_classes or int(y.max()) + 1
        fold = stratified_folds(y, cfg.folds, cfg.seed)
        tc = TrainConfig(n_trees=cfg.n_trees)
        names = [f"f{i}" for i in range(X.shape[1])]
        accs = []
        for f in range(cfg.folds):
            tr, te = fold != f, fold == f
            if not te.any() or not tr.any():
                continue
            model = train(FeatureMatrix(X[tr], y[tr], np.zeros(tr.sum()), names), tc,
                          seed=derive_seed(cfg.seed, "sfs-model", f), n_classes=C)
            accs.append(float(np.mean(model.predict_labels(X[te]) == y[te])))
        return float(np.mean(accs))

    return evaluate


def sfs_select(m: FeatureMatrix, k: int = 20, evaluate: Callable | None = None,
               cfg: SFSConfig | None = None) -> list[int]:
    """Return ``k`` feature indices in the order greedy forward selection adds them.

    At each step the candidate with the highest ``evaluate(X_subset, y)`` joins;
    ties go to the lower feature index.
    """
    cfg = cfg or SFSConfig(k=k)
    d = m.n_features
    if not 1 <= k <= d:
        raise BadArgument(f"k={k} must lie in [1, {d}]")
    if np.unique(m.labels).size < 2:
        raise BadArgument("forward selection needs at least two classes")
    rows = np.arange(m.n_rows) if cfg.max_rows is None else stratified_subsample(m.labels, cfg.max_rows, cfg.seed)
    X, y = m.X[rows], m.labels[rows]
    evaluate = evaluate or cv_accuracy_evaluator(cfg, int(m.labels.max()) + 1)
    selected: list[int] = []
    remaining = list(range(d))
    while len(selected) < k:
        best_score, best_j = -np.inf, None
        for j in remaining:
            score = evaluate(X[:, selected + [j]], y)
            if score > best_score:
                best_score, best_j = score, j
        selected.append(best_j)
        remaining.remove(best_j)
    return selected
