"""Relevance differencing, drift signatures, threshold calibration, and verdicts.

A relevance difference compares a candidate model with a clean reference
feature by feature, ``(F_clean - F_other) / F_clean``. A signature is a
feature subset whose summed difference takes a sign, under its own
scenario, that no other predefined scenario produces. The vector of signs
observed over all signatures names the scenario.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ._seeding import derive_seed
from .drift_lab import CLEAN_NOISE_RATIO, UNIFORM_NOISE, DriftScenario, corrupt_labels
from .errors import BadArgument, SignatureNotFound
from .matrix import FeatureMatrix
from .selection import stratified_subsample
from .trees import RelevanceProfile, TrainConfig, predictor_importance, train

UNKNOWN = "unknown"
NO_DRIFT = "none"
THRESHOLD_FLOOR = 1e-6


@dataclass
class DiffProfile:
    values: np.ndarray  # NaN on excluded indices
    clean_model_id: str = ""
    subject_model_id: str = ""
    excluded_features: tuple = ()

    @property
    def mask(self) -> np.ndarray:
        m = np.ones(self.values.shape[0], dtype=bool)
        m[list(self.excluded_features)] = False
        return m

    def signature_sum(self, indices: Sequence[int]) -> float:
        idx = [i for i in indices if i not in set(self.excluded_features)]
        return float(np.sum(self.values[idx])) if idx else 0.0

    def to_dict(self) -> dict:
        return {
            "clean_model_id": self.clean_model_id,
            "subject_model_id": self.subject_model_id,
            "excluded_features": [int(i) + 1 for i in self.excluded_features],
            "values": [None if not np.isfinite(v) else float(v) for v in self.values],
        }


def relevance_diff(clean: RelevanceProfile, other: RelevanceProfile, eps: float | None = None) -> DiffProfile:
    """Normalised relevance gap per feature; features with ``F_clean < eps`` are excluded.

    ``eps`` defaults to ``1e-4 * max(F_clean)``.
    """
    c = np.asarray(clean.values, dtype=np.float64)
    o = np.asarray(other.values, dtype=np.float64)
    if c.shape != o.shape:
        raise BadArgument(f"profile dimensions differ: {c.shape} vs {o.shape}")
    if list(clean.feature_names) != list(other.feature_names):
        raise BadArgument("profiles list features in a different order")
    if eps is None:
        eps = 1e-4 * float(c.max(initial=0.0))
    keep = c >= eps if eps > 0 else c > 0
    values = np.full(c.shape, np.nan)
    values[keep] = (c[keep] - o[keep]) / c[keep]
    excluded = tuple(int(i) for i in np.flatnonzero(~keep))
    return DiffProfile(values, clean.model_id, other.model_id, excluded)


@dataclass
class DriftSignature:
    scenario_id: str
    feature_indices: tuple  # 0-based
    expected_sign_pattern: dict = field(default_factory=dict)  # scenario -> -1 / 0 / +1
    threshold: float = THRESHOLD_FLOOR
    is_global: bool = False

    def __post_init__(self):
        self.feature_indices = tuple(sorted(int(i) for i in self.feature_indices))
        if not self.feature_indices:
            raise BadArgument(f"signature {self.scenario_id!r} has no features")
        if not self.threshold > 0:
            raise BadArgument("threshold must be positive")

    @property
    def trigger_sign(self) -> int:
        return int(self.expected_sign_pattern.get(self.scenario_id, 0))

    def to_dict(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "features": [i + 1 for i in self.feature_indices],
            "global": self.is_global,
            "sign_pattern": {k: int(v) for k, v in sorted(self.expected_sign_pattern.items())},
            "threshold": float(self.threshold),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DriftSignature":
        return cls(
            scenario_id=data["scenario_id"],
            feature_indices=tuple(int(i) - 1 for i in data["features"]),
            expected_sign_pattern={k: int(v) for k, v in data.get("sign_pattern", {}).items()},
            threshold=float(data.get("threshold", THRESHOLD_FLOOR)),
            is_global=bool(data.get("global", False)),
        )


def save_signatures(signatures: Sequence[DriftSignature], path) -> None:
    doc = {"signatures": [s.to_dict() for s in signatures]}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_signatures(path) -> list[DriftSignature]:
    return [DriftSignature.from_dict(d) for d in json.loads(Path(path).read_text())["signatures"]]


@dataclass
class SignatureSelection:
    signatures: list[DriftSignature]
    dropped: dict  # scenario -> reason
    diffs: dict  # scenario -> DiffProfile


def _sign(x: float) -> int:
    return int(np.sign(x)) if np.isfinite(x) else 0


def select_signatures(clean: RelevanceProfile, worst_cases: Mapping[str, RelevanceProfile],
                      k_per_scenario: int = 3, overrides: Mapping[str, Sequence[int]] | None = None,
                      global_coverage: float = 0.9, eps: float | None = None) -> SignatureSelection:
    """Find, per scenario, features whose difference sign no other scenario shares.

    A scenario whose differences point the same way on at least
    ``global_coverage`` of the features, with an all-feature sum sign that
    no other scenario shares, gets the all-feature signature. Otherwise the
    ``k_per_scenario`` sign-unique features with the largest margin (the
    smallest distance from zero of that feature's differences across all
    scenarios) are used, skipping features an earlier scenario already
    claimed unless nothing else is left. ``overrides`` maps scenario ids to
    1-based feature lists (or ``"all"``) and bypasses the search for those
    scenarios.
    """
    scenarios = sorted(worst_cases)
    if len(scenarios) < 2:
        raise BadArgument("signature selection needs at least two scenarios")
    overrides = dict(overrides or {})
    diffs = {s: relevance_diff(clean, worst_cases[s], eps) for s in scenarios}
    usable = np.ones(len(clean), dtype=bool)
    for dp in diffs.values():
        usable &= dp.mask
    all_idx = np.flatnonzero(usable)
    D = np.vstack([np.where(usable, diffs[s].values, 0.0) for s in scenarios])
    signs = np.sign(D)
    totals = {s: float(D[j, usable].sum()) for j, s in enumerate(scenarios)}

    chosen: dict[str, tuple[tuple, bool]] = {}
    dropped: dict[str, str] = {}
    claimed: set[int] = set()
    for j, s in enumerate(scenarios):
        if s in overrides:
            spec = overrides[s]
            if isinstance(spec, str) and spec.lower() == "all":
                chosen[s] = (tuple(all_idx), True)
            else:
                idx = tuple(int(i) - 1 for i in spec)
                if any(i < 0 or i >= len(clean) for i in idx):
                    raise BadArgument(f"override for {s} references a missing feature")
                chosen[s] = (idx, len(idx) == len(clean))
            continue
        others = [t for t in range(len(scenarios)) if t != j]
        tot_sign = _sign(totals[s])
        coverage = float(np.mean(signs[j, usable] == tot_sign)) if tot_sign else 0.0
        if tot_sign and coverage >= global_coverage and all(_sign(totals[scenarios[t]]) == -tot_sign for t in others):
            chosen[s] = (tuple(all_idx), True)
            continue
        unique = usable & (signs[j] != 0)
        for t in others:
            unique &= signs[t] == -signs[j]
        cand = np.flatnonzero(unique)
        if cand.size == 0:
            dropped[s] = str(SignatureNotFound(s))
            continue
        # keep subset signatures disjoint while an unclaimed feature remains
        fresh = np.setdiff1d(cand, list(claimed))
        if fresh.size:
            cand = fresh
        margin = np.min(np.abs(D[:, cand]), axis=0)
        # largest margin first, lower index on ties
        order = np.lexsort((cand, -margin))
        chosen[s] = (tuple(cand[order[:k_per_scenario]]), False)
        claimed.update(int(i) for i in chosen[s][0])

    signatures = []
    for s, (idx, is_global) in chosen.items():
        pattern = {t: _sign(diffs[t].signature_sum(idx)) for t in scenarios}
        signatures.append(DriftSignature(s, idx, pattern, THRESHOLD_FLOOR, is_global))
    signatures.sort(key=lambda g: g.scenario_id)
    return SignatureSelection(signatures, dropped, diffs)


def signature_sums(clean: RelevanceProfile, candidate: RelevanceProfile,
                   signatures: Sequence[DriftSignature], eps: float | None = None) -> dict[str, float]:
    dp = relevance_diff(clean, candidate, eps)
    return {g.scenario_id: dp.signature_sum(g.feature_indices) for g in signatures}


@dataclass
class Calibration:
    signatures: list[DriftSignature]
    replica_sums: dict  # scenario -> list of replica sums


def calibrate_thresholds(clean_train: FeatureMatrix, signatures: Sequence[DriftSignature],
                         reference: RelevanceProfile, n_replicas: int = 30, seed: int = 0,
                         train_config: TrainConfig | None = None, n_classes: int | None = None,
                         replica_seeds: Sequence[tuple[int, int]] | None = None,
                         sigmas: float = 3.0, replica_rows: int | None = None,
                         label_noise: float = CLEAN_NOISE_RATIO) -> Calibration:
    """Set each threshold to ``mean + sigmas * std`` of ``|sum|`` over clean replicas.

    Replica ``r`` retrains on ``clean_train`` (true labels) with a fresh 5%
    label redraw and a fresh model seed, unless ``replica_seeds`` pins the
    ``(label_seed, model_seed)`` pairs. With ``replica_rows`` each replica
    also draws its own stratified subsample of that size, which matches the
    variability of models trained on small chunks. ``label_noise`` sets the
    redraw ratio (0 keeps the given labels).
    """
    if replica_seeds is None:
        if n_replicas < 10:
            raise BadArgument("calibration needs at least 10 replicas")
        replica_seeds = [(derive_seed(seed, "replica-labels", r), derive_seed(seed, "replica-model", r))
                         for r in range(n_replicas)]
    clean_train.ensure_trainable("threshold calibration")
    sums = {g.scenario_id: [] for g in signatures}
    for label_seed, model_seed in replica_seeds:
        m = clean_train
        if replica_rows is not None and replica_rows < clean_train.n_rows:
            m = m.take(stratified_subsample(m.labels, replica_rows, label_seed))
        if label_noise > 0:
            m = corrupt_labels(m, DriftScenario(UNIFORM_NOISE, label_noise, seed=label_seed), n_classes)
        prof = predictor_importance(train(m, train_config, model_seed, n_classes))
        for sid, v in signature_sums(reference, prof, signatures).items():
            sums[sid].append(v)
    out = []
    for g in signatures:
        a = np.abs(np.asarray(sums[g.scenario_id]))
        thr = float(a.mean() + sigmas * a.std()) if a.size else THRESHOLD_FLOOR
        out.append(DriftSignature(g.scenario_id, g.feature_indices, dict(g.expected_sign_pattern),
                                  max(thr, THRESHOLD_FLOOR), g.is_global))
    return Calibration(out, sums)


@dataclass
class DriftVerdict:
    drift_detected: bool
    explanation: str
    signature_sums: dict
    margins: dict

    def __post_init__(self):
        if self.explanation not in (NO_DRIFT,) and not self.drift_detected:
            raise BadArgument("an explanation requires detected drift")

    def to_dict(self) -> dict:
        return {
            "drift_detected": self.drift_detected,
            "explanation": self.explanation,
            "signature_sums": {k: float(v) for k, v in sorted(self.signature_sums.items())},
            "margins": {k: float(v) for k, v in sorted(self.margins.items())},
        }


def explain(sums: Mapping[str, float], signatures: Sequence[DriftSignature], mode: str = "exact") -> DriftVerdict:
    """Turn signature sums into a verdict.

    Only signatures whose ``|sum|`` exceeds their threshold take part. In
    ``exact`` mode a scenario is named when it is the single scenario whose
    learned sign pattern agrees with every significant signature; ``nearest``
    picks the scenario with the fewest disagreements (ties -> unknown).
    """
    if mode not in ("exact", "nearest"):
        raise BadArgument(f"unknown explanation mode {mode!r}")
    margins = {g.scenario_id: abs(sums[g.scenario_id]) - g.threshold for g in signatures}
    significant = [g for g in signatures if margins[g.scenario_id] > 0]
    if not significant:
        return DriftVerdict(False, NO_DRIFT, dict(sums), margins)
    scenarios = sorted({s for g in signatures for s in g.expected_sign_pattern})
    disagreements = {}
    for s in scenarios:
        bad = 0
        for g in significant:
            expected = g.expected_sign_pattern.get(s, 0)
            if expected != 0 and expected != _sign(sums[g.scenario_id]):
                bad += 1
        disagreements[s] = bad
    if mode == "exact":
        matches = [s for s in scenarios if disagreements[s] == 0]
    else:
        best = min(disagreements.values())
        matches = [s for s in scenarios if disagreements[s] == best]
    explanation = matches[0] if len(matches) == 1 else UNKNOWN
    return DriftVerdict(True, explanation, dict(sums), margins)


def detect_and_explain(clean: RelevanceProfile, candidate: RelevanceProfile,
                       signatures: Sequence[DriftSignature], mode: str = "exact",
                       eps: float | None = None) -> DriftVerdict:
    return explain(signature_sums(clean, candidate, signatures, eps), signatures, mode)
