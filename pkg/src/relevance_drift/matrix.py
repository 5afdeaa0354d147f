"""FeatureMatrix: the row container passed between every stage.

Rows carry a provenance tag (``partition``) so that the held-out test part
can be refused by training, corruption and calibration code paths.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import BadArgument, BadData, ProvenanceError

TEST_PARTITION = "test"


@dataclass(frozen=True)
class FeatureMatrix:
    X: np.ndarray
    labels: np.ndarray
    subject_ids: np.ndarray
    feature_names: list[str]
    bank_version: str = "unknown"
    partition: np.ndarray | None = None
    row_ids: np.ndarray | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise BadArgument(f"X must be 2-D, got shape {X.shape}")
        n, d = X.shape
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        subjects = np.asarray(self.subject_ids, dtype=object).reshape(-1)
        if labels.shape[0] != n or subjects.shape[0] != n:
            raise BadArgument("labels and subject_ids must have one entry per row")
        if len(self.feature_names) != d:
            raise BadArgument(f"{len(self.feature_names)} feature names for {d} columns")
        if labels.size and labels.min() < 0:
            raise BadData("labels must be non-negative class ids")
        partition = self.partition
        if partition is None:
            partition = np.full(n, "", dtype=object)
        partition = np.asarray(partition, dtype=object).reshape(-1)
        row_ids = self.row_ids
        if row_ids is None:
            row_ids = np.arange(n, dtype=np.int64)
        row_ids = np.asarray(row_ids, dtype=np.int64).reshape(-1)
        if partition.shape[0] != n or row_ids.shape[0] != n:
            raise BadArgument("partition and row_ids must have one entry per row")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "subject_ids", subjects)
        object.__setattr__(self, "feature_names", list(self.feature_names))
        object.__setattr__(self, "partition", partition)
        object.__setattr__(self, "row_ids", row_ids)

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.n_rows

    def take(self, rows) -> "FeatureMatrix":
        rows = np.asarray(rows)
        return replace(
            self,
            X=self.X[rows],
            labels=self.labels[rows],
            subject_ids=self.subject_ids[rows],
            partition=self.partition[rows],
            row_ids=self.row_ids[rows],
        )

    def select_features(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = [int(i) for i in indices]
        if any(i < 0 or i >= self.n_features for i in idx):
            raise BadArgument("feature index out of range")
        return replace(self, X=self.X[:, idx], feature_names=[self.feature_names[i] for i in idx])

    def with_labels(self, labels) -> "FeatureMatrix":
        labels = np.asarray(labels, dtype=np.int64)
        if labels.shape != self.labels.shape:
            raise BadArgument("replacement labels must match row count")
        return replace(self, labels=labels)

    def with_partition(self, tag: str) -> "FeatureMatrix":
        return replace(self, partition=np.full(self.n_rows, tag, dtype=object))

    def for_subject(self, subject) -> "FeatureMatrix":
        return self.take(np.flatnonzero(self.subject_ids == subject))

    def subjects(self) -> list:
        return sorted(set(self.subject_ids.tolist()), key=str)

    def check_finite(self):
        if not np.all(np.isfinite(self.X)):
            raise BadData("feature matrix contains NaN or Inf")

    def ensure_trainable(self, context: str = "training"):
        """Raise if any row belongs to the held-out test partition."""
        if np.any(self.partition == TEST_PARTITION):
            raise ProvenanceError(f"test-partition rows passed to {context}")

    @staticmethod
    def concat(parts: Sequence["FeatureMatrix"]) -> "FeatureMatrix":
        if not parts:
            raise BadArgument("nothing to concatenate")
        first = parts[0]
        for p in parts[1:]:
            if p.feature_names != first.feature_names:
                raise BadArgument("feature names differ between parts")
        return FeatureMatrix(
            X=np.vstack([p.X for p in parts]),
            labels=np.concatenate([p.labels for p in parts]),
            subject_ids=np.concatenate([p.subject_ids for p in parts]),
            feature_names=first.feature_names,
            bank_version=first.bank_version,
            partition=np.concatenate([p.partition for p in parts]),
            row_ids=np.concatenate([p.row_ids for p in parts]),
        )


def write_matrix_csv(m: FeatureMatrix, path) -> None:
    """Write rows as CSV plus a ``.json`` sidecar carrying the bank version."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(m.feature_names) + ["label", "subject"])
        for row, lab, subj in zip(m.X, m.labels, m.subject_ids):
            w.writerow([repr(float(v)) for v in row] + [int(lab), subj])
    sidecar = {
        "bank_version": m.bank_version,
        "n_rows": m.n_rows,
        "n_features": m.n_features,
    }
    path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")


def read_matrix_csv(path) -> FeatureMatrix:
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = list(r)
    if header[-2:] != ["label", "subject"]:
        raise BadData(f"{path}: last two columns must be label,subject")
    names = header[:-2]
    X = np.array([[float(v) for v in row[:-2]] for row in rows], dtype=np.float64).reshape(len(rows), len(names))
    labels = np.array([int(row[-2]) for row in rows], dtype=np.int64)
    subjects = np.array([row[-1] for row in rows], dtype=object)
    bank_version = "unknown"
    sidecar = path.with_suffix(".json")
    if sidecar.exists():
        bank_version = json.loads(sidecar.read_text()).get("bank_version", bank_version)
    m = FeatureMatrix(X, labels, subjects, names, bank_version=bank_version)
    m.check_finite()
    return m
