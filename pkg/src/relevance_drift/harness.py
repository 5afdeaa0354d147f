"""Experiment driver: protocol, corruption sweeps, incremental runs and reports.

Every random draw is keyed by ``(root seed, subject, scenario, ratio, ...)``
through :func:`derive_seed`, so results do not depend on how work is
scheduled across processes.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from . import __version__
from ._seeding import derive_seed
from .drift_lab import (
    CLASS_CONFUSION,
    SplitResult,
    SyntheticConfig,
    clean_label_mix,
    corrupt_labels,
    generate_synthetic,
    standard_scenarios,
    split_three_parts,
)
from .errors import BadArgument, ConfigError, StateError
from .features import ACTIVITY_NAMES, CHANNELS, FeatureBank, SensorRecording, WindowingConfig, extract_windows
from .fingerprint import (
    NO_DRIFT,
    THRESHOLD_FLOOR,
    DriftSignature,
    calibrate_thresholds,
    detect_and_explain,
    load_signatures,
    save_signatures,
    select_signatures,
    signature_sums,
)
from .incremental import init as init_ensemble
from .incremental import label_chunk, train_chunk_model
from .matrix import FeatureMatrix, read_matrix_csv, write_matrix_csv
from .selection import SFSConfig, cv_accuracy_evaluator, sfs_select, stratified_subsample
from .trees import RelevanceProfile, TrainConfig, predictor_importance, train

DEFAULT_GRID = tuple(round(0.1 * i, 1) for i in range(11))
PUBLISHED_SETS = {"S1": "all", "S2": [2, 4, 6], "S3": [12, 17, 20]}
FIG2_COLUMNS = ["subject", "ratio", "relevance_sum", "test_accuracy", "affected_class_recall"]
FIG3_COLUMNS = ["subject", "ratio", "activity", "recall"]


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not np.isfinite(v) else repr(round(float(v), 12))
    return str(v)


def _from_dict(cls, data, where):
    data = dict(data or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}")
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


# ---------------------------------------------------------------- configuration


@dataclass
class DataSource:
    source: str = "synthetic"  # or "csv"
    synthetic: dict = field(default_factory=dict)
    csv_dir: str | None = None
    label_map: str | dict | None = None


@dataclass
class SignatureConfig:
    k_per_scenario: int = 3
    overrides: dict | None = None
    global_coverage: float = 0.9
    n_replicas: int = 30
    sigmas: float = 3.0
    mode: str = "exact"


@dataclass
class IncrementalConfig:
    scenario: str | None = "S2"
    inject_at: int = 1  # first drifting chunk (0-based)
    ratio: float = 1.0
    n_chunks: int = 3
    policy: str = "repair"  # or "reject"
    n_replicas: int = 30
    reference_models: int = 5


@dataclass
class ExperimentConfig:
    data: DataSource = field(default_factory=DataSource)
    activity_names: list = field(default_factory=lambda: list(ACTIVITY_NAMES))
    windowing: WindowingConfig = field(default_factory=WindowingConfig)
    sfs: SFSConfig = field(default_factory=SFSConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    scenarios: dict = field(default_factory=lambda: {"S2": ["biking", "walking"], "S3": ["upstairs", "downstairs"]})
    signatures: SignatureConfig = field(default_factory=SignatureConfig)
    sweep_grid: list = field(default_factory=lambda: list(DEFAULT_GRID))
    incremental: IncrementalConfig = field(default_factory=IncrementalConfig)
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        self.validate()

    @classmethod
    def from_dict(cls, data: dict | None) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s) {unknown}")
        sub = {
            "data": DataSource, "windowing": WindowingConfig, "sfs": SFSConfig, "train": TrainConfig,
            "signatures": SignatureConfig, "incremental": IncrementalConfig,
        }
        for key, typ in sub.items():
            if key in data:
                data[key] = _from_dict(typ, data[key], key)
        try:
            return cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        doc = self.to_dict()
        doc.pop("output_dir")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    def validate(self):
        if self.data.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.data.source!r}")
        if self.data.source == "csv" and not self.data.csv_dir:
            raise ConfigError("csv data source needs csv_dir")
        names = list(self.activity_names)
        for sid, pair in self.scenarios.items():
            if len(pair) != 2:
                raise ConfigError(f"scenario {sid} needs [source, target]")
            missing = [a for a in pair if a not in names]
            if missing:
                raise ConfigError(f"scenario {sid} references unknown activities {missing}")
        if any(not 0.0 <= float(r) <= 1.0 for r in self.sweep_grid):
            raise ConfigError("sweep grid must lie within [0, 1]")
        if self.signatures.mode not in ("exact", "nearest"):
            raise ConfigError(f"unknown explanation mode {self.signatures.mode!r}")
        if self.signatures.n_replicas < 10:
            raise ConfigError("calibration needs at least 10 replicas")
        inc = self.incremental
        if inc.policy not in ("repair", "reject"):
            raise ConfigError(f"unknown incremental policy {inc.policy!r}")
        if inc.scenario is not None and inc.scenario not in self.scenario_ids:
            raise ConfigError(f"incremental scenario {inc.scenario!r} is not defined")
        if inc.n_chunks < 1 or not 0.0 <= inc.ratio <= 1.0:
            raise ConfigError("incremental run needs n_chunks >= 1 and ratio in [0, 1]")
        if self.signatures.overrides:
            unknown = sorted(set(self.signatures.overrides) - set(self.scenario_ids))
            if unknown:
                raise ConfigError(f"signature overrides for undefined scenarios {unknown}")
        if self.data.source == "synthetic":
            try:
                self.synthetic_config().validate(self.windowing.window_seconds, self.windowing.slide_seconds)
            except (BadArgument, TypeError) as exc:
                raise ConfigError(f"synthetic config: {exc}") from exc

    @property
    def scenario_ids(self) -> list[str]:
        return sorted(["S1", *self.scenarios])

    def synthetic_config(self) -> SyntheticConfig:
        data = dict(self.data.synthetic)
        data.setdefault("activity_names", list(self.activity_names))
        return SyntheticConfig.from_dict(data)

    def scenario_map(self):
        return standard_scenarios(self.activity_names, {k: tuple(v) for k, v in self.scenarios.items()})


# ---------------------------------------------------------------- data


def load_label_map(spec) -> dict[str, int]:
    if spec is None:
        return {a: i for i, a in enumerate(ACTIVITY_NAMES)}
    if isinstance(spec, dict):
        return {str(k): int(v) for k, v in spec.items()}
    return {str(k): int(v) for k, v in json.loads(Path(spec).read_text()).items()}


def read_recording_csv(path, label_map: dict[str, int], activity_names=None) -> SensorRecording:
    """Read ``t,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,label`` with activity-name labels."""
    path = Path(path)
    with path.open(newline="") as fh:
        r = csv.reader(fh)
        header = [h.strip() for h in next(r)]
        expected = ["t", *CHANNELS, "label"]
        if header != expected:
            raise ConfigError(f"{path}: header must be {','.join(expected)}")
        rows = list(r)
    if not rows:
        raise ConfigError(f"{path}: no samples")
    try:
        labels = np.array([label_map[row[-1].strip()] for row in rows], dtype=np.int64)
    except KeyError as exc:
        raise ConfigError(f"{path}: activity {exc.args[0]!r} missing from label map") from exc
    t = np.array([float(row[0]) for row in rows])
    ch = np.array([[float(v) for v in row[1:7]] for row in rows])
    dt = np.diff(t)
    fs = float(round(1.0 / np.median(dt), 6)) if dt.size and np.median(dt) > 0 else 50.0
    names = activity_names or [a for a, _ in sorted(label_map.items(), key=lambda kv: kv[1])]
    return SensorRecording(path.stem, ch, labels, fs, list(names))


def write_recording_csv(rec: SensorRecording, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *CHANNELS, "label"])
        for i in range(len(rec)):
            w.writerow([repr(round(i / rec.sample_rate_hz, 6))] + [repr(float(v)) for v in rec.channels[i]]
                       + [rec.activity_names[rec.labels[i]]])


def load_recordings(cfg: ExperimentConfig) -> list[SensorRecording]:
    if cfg.data.source == "synthetic":
        return generate_synthetic(cfg.synthetic_config(), derive_seed(cfg.seed, "synthetic"))
    directory = Path(cfg.data.csv_dir)
    files = sorted(directory.glob("*.csv"))
    if not files:
        raise ConfigError(f"no CSV recordings in {directory}")
    label_map = load_label_map(cfg.data.label_map)
    return [read_recording_csv(f, label_map, cfg.activity_names) for f in files]


def extract_all(recordings, windowing: WindowingConfig, bank: FeatureBank | None = None) -> FeatureMatrix:
    """Pooled feature matrix of all recordings; row ids are global row positions."""
    m = FeatureMatrix.concat([extract_windows(r, windowing, bank) for r in recordings])
    return replace(m, row_ids=np.arange(m.n_rows))


@dataclass
class PreparedData:
    """Selected-feature matrix plus the per-subject three-part split."""

    matrix: FeatureMatrix
    selected: list[int]
    selected_names: list[str]
    splits: dict  # subject -> SplitResult

    def subjects(self) -> list:
        return sorted(self.splits, key=str)


def split_subjects(m: FeatureMatrix, seed: int) -> dict:
    return {s: split_three_parts(m.for_subject(s), derive_seed(seed, "split", s)) for s in m.subjects()}


def prepare_data(cfg: ExperimentConfig, full: FeatureMatrix | None = None,
                 selected: list[int] | None = None) -> PreparedData:
    """Extract features, split every subject, and run forward selection on the pooled training parts.

    The test parts never reach the selection step.
    """
    if full is None:
        full = extract_all(load_recordings(cfg), cfg.windowing)
    full.check_finite()
    splits = split_subjects(full, cfg.seed)
    if selected is None:
        pooled = FeatureMatrix.concat([sp.train for sp in splits.values()])
        pooled.ensure_trainable("feature selection")
        k = min(cfg.sfs.k, full.n_features)
        selected = sfs_select(pooled, k, cv_accuracy_evaluator(cfg.sfs, len(cfg.activity_names)), cfg.sfs)
    m = full.select_features(selected)
    splits = {s: _select_split(sp, selected) for s, sp in splits.items()}
    return PreparedData(m, list(selected), list(m.feature_names), splits)


def _select_split(sp, idx):
    return SplitResult(*(p.select_features(idx) for p in (sp.train_a, sp.train_b, sp.test, sp.dropped)))


# ---------------------------------------------------------------- protocol


@dataclass
class SubjectProtocol:
    subject: str
    clean_model: object
    clean_profile: RelevanceProfile
    worst_models: dict
    worst_profiles: dict
    signatures: list[DriftSignature]
    dropped: dict
    replica_sums: dict


def protocol_for_subject(cfg: ExperimentConfig, subject: str, split, seed: int | None = None) -> SubjectProtocol:
    """Clean model, worst-case models, signature selection and calibration for one subject."""
    seed = cfg.seed if seed is None else seed
    C = len(cfg.activity_names)
    scen = cfg.scenario_map()
    train_rows = split.train
    clean_labels = clean_label_mix(train_rows, derive_seed(seed, subject, "clean-mix"), C)
    clean_model = train(clean_labels, cfg.train, derive_seed(seed, subject, "clean-model"), C)
    clean_profile = predictor_importance(clean_model)
    worst_models, worst_profiles = {}, {}
    for sid in sorted(scen):
        s = scen[sid].at(1.0, derive_seed(seed, subject, sid, "worst-labels"))
        wm = train(corrupt_labels(clean_labels, s, C), cfg.train, derive_seed(seed, subject, sid, "worst-model"), C)
        worst_models[sid] = wm
        worst_profiles[sid] = predictor_importance(wm)
    sc = cfg.signatures
    sel = select_signatures(clean_profile, worst_profiles, sc.k_per_scenario, sc.overrides, sc.global_coverage)
    cal = calibrate_thresholds(train_rows, sel.signatures, clean_profile, sc.n_replicas,
                               derive_seed(seed, subject, "calibration"), cfg.train, C, sigmas=sc.sigmas)
    return SubjectProtocol(subject, clean_model, clean_profile, worst_models, worst_profiles,
                           cal.signatures, sel.dropped, cal.replica_sums)


def _write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _manifest(cfg: ExperimentConfig, stage: str, extra: dict | None = None) -> dict:
    import numba
    import platform

    doc = {
        "stage": stage,
        "config_hash": cfg.config_hash(),
        "config": {k: v for k, v in cfg.to_dict().items() if k != "output_dir"},
        "seed": cfg.seed,
        "versions": {"relevance_drift": __version__, "numpy": np.__version__, "numba": numba.__version__,
                     "python": platform.python_version()},
    }
    doc.update(extra or {})
    return doc


def run_protocol(cfg: ExperimentConfig, jobs: int = 1, prepared: PreparedData | None = None) -> Path:
    """Run the per-subject protocol and persist every artifact under ``cfg.output_dir``."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    prepared = prepared or prepare_data(cfg)
    write_matrix_csv(prepared.matrix, out / "features" / "selected.csv")
    parts = {}
    for s, sp in prepared.splits.items():
        parts[s] = {tag: [int(i) for i in getattr(sp, tag).row_ids]
                    for tag in ("train_a", "train_b", "test", "dropped")}
    _write_json(out / "features" / "partitions.json", {
        "selected_indices": [i + 1 for i in prepared.selected],
        "selected_names": prepared.selected_names,
        "partitions": parts,
    })
    subjects = prepared.subjects()
    results = Parallel(n_jobs=jobs)(
        delayed(protocol_for_subject)(cfg, s, prepared.splits[s]) for s in subjects)
    for res in results:
        d = out / "models" / res.subject
        d.mkdir(parents=True, exist_ok=True)
        res.clean_model.save(d / "clean.json")
        for sid, wm in res.worst_models.items():
            wm.save(d / f"worst_{sid}.json")
        _write_json(out / "profiles" / f"{res.subject}.json", {
            "clean": res.clean_profile.to_dict(),
            "worst_cases": {sid: p.to_dict() for sid, p in sorted(res.worst_profiles.items())},
        })
        save_signatures(res.signatures, out / "signatures" / f"{res.subject}.json")
        _write_json(out / "signatures" / f"{res.subject}.calibration.json", {
            "dropped": res.dropped,
            "replica_sums": {k: [float(v) for v in vals] for k, vals in sorted(res.replica_sums.items())},
        })
    _write_json(out / "manifest.json", _manifest(cfg, "protocol", {"subjects": [str(s) for s in subjects]}))
    return out


@dataclass
class ProtocolState:
    prepared: PreparedData
    clean_profiles: dict
    signatures: dict


def load_protocol(cfg: ExperimentConfig) -> ProtocolState:
    out = Path(cfg.output_dir)
    manifest = out / "manifest.json"
    parts_path = out / "features" / "partitions.json"
    matrix_path = out / "features" / "selected.csv"
    for p in (manifest, parts_path, matrix_path):
        if not p.exists():
            raise StateError(f"missing protocol artifact {p}; run the protocol stage first")
    if json.loads(manifest.read_text()).get("config_hash") != cfg.config_hash():
        raise StateError("protocol artifacts were produced with a different config")
    # row ids are positions in the pooled matrix, which is written in row order
    m = read_matrix_csv(matrix_path)
    doc = json.loads(parts_path.read_text())
    splits, profiles, sigs = {}, {}, {}
    for s, tags in doc["partitions"].items():
        rows = {t: np.asarray(ids, dtype=np.int64) for t, ids in tags.items()}
        splits[s] = SplitResult(*(m.take(rows[t]).with_partition(t) for t in ("train_a", "train_b", "test", "dropped")))
        prof_path = out / "profiles" / f"{s}.json"
        sig_path = out / "signatures" / f"{s}.json"
        if not prof_path.exists() or not sig_path.exists():
            raise StateError(f"missing protocol artifacts for subject {s}")
        profiles[s] = RelevanceProfile.from_dict(json.loads(prof_path.read_text())["clean"])
        sigs[s] = load_signatures(sig_path)
    prepared = PreparedData(m, [i - 1 for i in doc["selected_indices"]], doc["selected_names"], splits)
    return ProtocolState(prepared, profiles, sigs)


# ---------------------------------------------------------------- sweep


def per_class_recall(y_true: np.ndarray, y_pred: np.ndarray, n_classes: int) -> np.ndarray:
    out = np.full(n_classes, np.nan)
    for c in range(n_classes):
        rows = y_true == c
        if rows.any():
            out[c] = float(np.mean(y_pred[rows] == c))
    return out


def affected_recall(scenario, recall: np.ndarray) -> float:
    """Recall of the confused source class; mean per-class recall for uniform noise."""
    if scenario.kind == CLASS_CONFUSION:
        return float(recall[scenario.source_class])
    return float(np.nanmean(recall))


def sweep_point(cfg: ExperimentConfig, subject: str, split, clean_profile: RelevanceProfile,
                signatures: list, sid: str, ratio: float, seed: int | None = None) -> dict:
    """Train one candidate model at ``ratio`` corruption and score it."""
    seed = cfg.seed if seed is None else seed
    C = len(cfg.activity_names)
    scenario = cfg.scenario_map()[sid]
    train_rows = split.train
    labels = clean_label_mix(train_rows, derive_seed(seed, subject, sid, ratio, "sweep-mix"), C)
    labels = corrupt_labels(labels, scenario.at(ratio, derive_seed(seed, subject, sid, ratio, "sweep-labels")), C)
    model = train(labels, cfg.train, derive_seed(seed, subject, sid, ratio, "sweep-model"), C)
    verdict = detect_and_explain(clean_profile, predictor_importance(model), signatures, cfg.signatures.mode)
    pred = model.predict_labels(split.test.X)
    recall = per_class_recall(split.test.labels, pred, C)
    return {
        "subject": subject,
        "scenario": sid,
        "ratio": float(ratio),
        "sums": {g.scenario_id: verdict.signature_sums[g.scenario_id] for g in signatures},
        "thresholds": {g.scenario_id: g.threshold for g in signatures},
        "test_accuracy": float(np.mean(pred == split.test.labels)),
        "recall": recall,
        "affected_class_recall": affected_recall(scenario, recall),
        "drift_detected": verdict.drift_detected,
        "explanation": verdict.explanation,
    }


def sweep_rows(cfg: ExperimentConfig, state: ProtocolState, jobs: int = 1) -> list[dict]:
    tasks = [(s, sid, float(r)) for s in state.prepared.subjects() for sid in cfg.scenario_ids for r in cfg.sweep_grid]
    return Parallel(n_jobs=jobs)(
        delayed(sweep_point)(cfg, s, state.prepared.splits[s], state.clean_profiles[s], state.signatures[s], sid, r)
        for s, sid, r in tasks)


def sweep_table(cfg: ExperimentConfig, rows: list[dict]) -> tuple[list[str], list[list[str]]]:
    sids = cfg.scenario_ids
    names = list(cfg.activity_names)
    header = (["subject", "scenario", "ratio"] + [f"sum_{s}" for s in sids] + [f"threshold_{s}" for s in sids]
              + ["test_accuracy", "affected_class_recall"] + [f"recall_{a}" for a in names]
              + ["drift_detected", "explanation"])
    table = []
    for r in rows:
        table.append(
            [r["subject"], r["scenario"], _fmt(r["ratio"])]
            + [_fmt(r["sums"].get(s, float("nan"))) for s in sids]
            + [_fmt(r["thresholds"].get(s, float("nan"))) for s in sids]
            + [_fmt(r["test_accuracy"]), _fmt(r["affected_class_recall"])]
            + [_fmt(v) for v in r["recall"]]
            + [_fmt(r["drift_detected"]), r["explanation"]])
    return header, table


def _write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def run_sweep(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Sweep every scenario over the ratio grid and write ``reports/sweep.csv``."""
    state = load_protocol(cfg)
    rows = sweep_rows(cfg, state, jobs)
    out = Path(cfg.output_dir) / "reports"
    header, table = sweep_table(cfg, rows)
    _write_csv(out / "sweep.csv", header, table)
    return out / "sweep.csv"


def read_sweep_csv(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def emit_report(sweep: list[dict], out_dir, scenario_ids=("S1", "S2", "S3"), activity_names=ACTIVITY_NAMES) -> list[Path]:
    """Long-format per-figure CSVs from sweep rows (as read back from ``sweep.csv``).

    ``fig2_<S>.csv`` holds the scenario's own signature sum, test accuracy and
    affected-class recall per subject and ratio; ``fig3_<S>.csv`` holds the
    recall of every activity. A JSON summary averages over subjects.
    """
    out = Path(out_dir)
    written = []
    summary = {}
    for sid in scenario_ids:
        rows = [r for r in sweep if r["scenario"] == sid]
        fig2 = [[r["subject"], r["ratio"], r.get(f"sum_{sid}", ""), r["test_accuracy"], r["affected_class_recall"]]
                for r in rows]
        fig3 = [[r["subject"], r["ratio"], a, r.get(f"recall_{a}", "")] for r in rows for a in activity_names]
        for name, header, table in ((f"fig2_{sid}.csv", FIG2_COLUMNS, fig2), (f"fig3_{sid}.csv", FIG3_COLUMNS, fig3)):
            _write_csv(out / name, header, table)
            written.append(out / name)
        by_ratio: dict[str, list] = {}
        for r in rows:
            by_ratio.setdefault(r["ratio"], []).append(r)
        summary[sid] = {
            ratio: {
                "relevance_sum": _mean(g, f"sum_{sid}"),
                "test_accuracy": _mean(g, "test_accuracy"),
                "affected_class_recall": _mean(g, "affected_class_recall"),
                "detected_fraction": float(np.mean([x["drift_detected"] == "true" for x in g])),
                "explained_fraction": float(np.mean([x["explanation"] == sid for x in g])),
            }
            for ratio, g in sorted(by_ratio.items(), key=lambda kv: float(kv[0]))
        }
    _write_json(out / "summary.json", summary)
    written.append(out / "summary.json")
    return written


def _mean(rows, key):
    vals = [float(r[key]) for r in rows if r.get(key, "") not in ("", None)]
    return float(np.mean(vals)) if vals else None


# ---------------------------------------------------------------- incremental


def stratified_chunks(m: FeatureMatrix, n_chunks: int, seed: int) -> list[FeatureMatrix]:
    """Deal each class's rows round-robin into ``n_chunks`` chunks after a seeded shuffle."""
    rng = np.random.default_rng(derive_seed(seed, "chunks"))
    assign = np.empty(m.n_rows, dtype=np.int64)
    for c in np.unique(m.labels):
        rows = np.flatnonzero(m.labels == c)
        rows = rows[rng.permutation(rows.size)]
        assign[rows] = np.arange(rows.size) % n_chunks
    return [m.take(np.flatnonzero(assign == k)) for k in range(n_chunks)]


def mean_profile(profiles: list[RelevanceProfile]) -> RelevanceProfile:
    values = np.mean([p.values for p in profiles], axis=0)
    h = hashlib.sha1("|".join(p.model_id for p in profiles).encode()).hexdigest()[:16]
    return RelevanceProfile(values, list(profiles[0].feature_names), "mean-" + h)


@dataclass
class ChunkScaleDetector:
    reference: RelevanceProfile
    signatures: list[DriftSignature]
    dropped: dict


def chunk_scale_detector(cfg: ExperimentConfig, subject: str, reference_rows: FeatureMatrix, chunk_rows: int,
                         seed: int) -> ChunkScaleDetector:
    """Reference profile, worst cases and thresholds for models trained on chunk-sized data.

    ``reference_rows`` should carry labels produced the same way as the
    stream's (self-training labels from the initial ensemble), so no extra
    redraw is applied. Relevance values scale with how much data a tree
    sees, so the reference is the mean profile of several models, each
    trained on its own stratified ``chunk_rows`` subsample.
    """
    C = len(cfg.activity_names)
    inc = cfg.incremental
    refs, subs = [], []
    for r in range(inc.reference_models):
        sub = reference_rows.take(stratified_subsample(reference_rows.labels, chunk_rows,
                                                       derive_seed(seed, subject, "inc-ref-rows", r)))
        subs.append(sub)
        refs.append(predictor_importance(train(sub, cfg.train, derive_seed(seed, subject, "inc-ref-model", r), C)))
    reference = mean_profile(refs)
    worst = {}
    for sid, s in sorted(cfg.scenario_map().items()):
        profs = []
        for r, sub in enumerate(subs):
            lab = _inject(sub, s.at(1.0, derive_seed(seed, subject, sid, "inc-worst", r)), C)
            profs.append(predictor_importance(train(lab, cfg.train, derive_seed(seed, subject, sid, "inc-worst-model", r), C)))
        worst[sid] = mean_profile(profs)
    sc = cfg.signatures
    sel = select_signatures(reference, worst, sc.k_per_scenario, sc.overrides, sc.global_coverage)
    signatures = paired_calibration(cfg, subject, reference_rows, sel.signatures, seed)
    return ChunkScaleDetector(reference, signatures, sel.dropped)


def paired_calibration(cfg: ExperimentConfig, subject: str, rows: FeatureMatrix, signatures, seed: int):
    """Thresholds from pairs of models fitted on disjoint, stratified halves of ``rows``.

    Each replica compares a model with a reference (averaged the same way as
    the detector's) that never saw the same rows, which is the situation of
    a fresh chunk judged against the reference.
    """
    C = len(cfg.activity_names)
    inc = cfg.incremental
    sums = {g.scenario_id: [] for g in signatures}
    for r in range(inc.n_replicas):
        halves = stratified_chunks(rows, 2, derive_seed(seed, subject, "inc-cal-halves", r))
        ref = mean_profile([
            predictor_importance(train(halves[0], cfg.train, derive_seed(seed, subject, "inc-cal-ref", r, j), C))
            for j in range(inc.reference_models)])
        cand = predictor_importance(train(halves[1], cfg.train, derive_seed(seed, subject, "inc-cal-cand", r), C))
        for sid, v in signature_sums(ref, cand, signatures).items():
            sums[sid].append(v)
    out = []
    for g in signatures:
        a = np.abs(np.asarray(sums[g.scenario_id]))
        thr = max(float(a.mean() + cfg.signatures.sigmas * a.std()), THRESHOLD_FLOOR)
        out.append(DriftSignature(g.scenario_id, g.feature_indices, dict(g.expected_sign_pattern), thr, g.is_global))
    return out


def _inject(m: FeatureMatrix, scenario, n_classes: int) -> FeatureMatrix:
    """Apply a scenario; a confusion whose source class is absent leaves labels unchanged."""
    if scenario.kind == CLASS_CONFUSION and not np.any(m.labels == scenario.source_class):
        return m
    return corrupt_labels(m, scenario, n_classes)


def incremental_for_subject(cfg: ExperimentConfig, prepared: PreparedData, subject: str,
                            seed: int | None = None, scenario: str | None = "config") -> list[dict]:
    """Stream the subject's second training part through a self-training ensemble.

    Each chunk's candidate base model is checked before it joins the
    ensemble. A flagged model is rejected, or (``repair`` policy) the rows
    carrying labels of the explained scenario's classes are relabelled from
    ground truth and the model is retrained and checked again. An
    unexplained flag is always a rejection.
    """
    seed = cfg.seed if seed is None else seed
    inc = cfg.incremental
    sid = inc.scenario if scenario == "config" else scenario
    C = len(cfg.activity_names)
    split = prepared.splits[subject]
    others = [prepared.splits[s].train for s in prepared.subjects() if s != subject]
    if not others:
        raise StateError("the incremental run needs at least two subjects")
    ui_rows = FeatureMatrix.concat(others)
    ui_rows = clean_label_mix(ui_rows, derive_seed(seed, subject, "ui-mix"), C)
    ensemble = init_ensemble(train(ui_rows, cfg.train, derive_seed(seed, subject, "ui-model"), C))
    chunks = stratified_chunks(split.train_b, inc.n_chunks, derive_seed(seed, subject))
    self_ref = split.train_a.with_labels(ensemble.predict_labels(split.train_a.X))
    det = chunk_scale_detector(cfg, subject, self_ref, chunks[0].n_rows, seed)
    scen = cfg.scenario_map()
    log = []
    for k, chunk in enumerate(chunks):
        _, _, _, labels = label_chunk(ensemble, chunk)
        self_labels = chunk.with_labels(labels)
        injected = sid is not None and k >= inc.inject_at
        if injected:
            self_labels = _inject(self_labels, scen[sid].at(inc.ratio, derive_seed(seed, subject, "inc-inject", k)), C)
        model_seed = derive_seed(seed, subject, "inc-chunk-model", k)
        model, error, weight = train_chunk_model(chunk, self_labels.labels, cfg.train, model_seed, C)
        verdict = detect_and_explain(det.reference, predictor_importance(model), det.signatures, cfg.signatures.mode)
        entry = {
            "subject": subject, "chunk": k, "rows": chunk.n_rows, "injected": sid if injected else NO_DRIFT,
            "drift_detected": verdict.drift_detected, "explanation": verdict.explanation,
            "signature_sums": {g: float(v) for g, v in sorted(verdict.signature_sums.items())},
            "whole_chunk_labels": chunk.n_rows, "requested_labels": 0, "action": "admit",
            "repaired_detected": None,
        }
        final_labels = self_labels.labels
        if verdict.drift_detected:
            explained = scen.get(verdict.explanation)
            if inc.policy == "repair" and explained is not None:
                classes = explained.affected_classes or tuple(range(C))
                ask = np.isin(self_labels.labels, classes)
                repaired = self_labels.labels.copy()
                repaired[ask] = chunk.labels[ask]  # ground truth stands in for the user
                entry["requested_labels"] = int(np.count_nonzero(ask))
                model, error, weight = train_chunk_model(chunk, repaired, cfg.train,
                                                         derive_seed(seed, subject, "inc-repair-model", k), C)
                again = detect_and_explain(det.reference, predictor_importance(model), det.signatures,
                                           cfg.signatures.mode)
                entry["repaired_detected"] = again.drift_detected
                entry["action"] = "repair" if not again.drift_detected else "reject"
                final_labels = repaired
            else:
                entry["action"] = "reject"
        if entry["action"] != "reject":
            ensemble.append(model, weight, {"chunk": k, "rows": chunk.n_rows,
                                            "user_labelled": entry["requested_labels"],
                                            "self_labelled": chunk.n_rows - entry["requested_labels"],
                                            "model_id": model.model_id})
        entry["label_accuracy"] = float(np.mean(final_labels == chunk.labels))
        entry["ensemble_size"] = len(ensemble)
        entry["test_accuracy"] = float(np.mean(ensemble.predict_labels(split.test.X) == split.test.labels))
        log.append(entry)
    return log


def run_incremental(cfg: ExperimentConfig, jobs: int = 1) -> Path:
    """Per-chunk verdict log for every subject, as JSON lines and CSV."""
    state = load_protocol(cfg)
    logs = Parallel(n_jobs=jobs)(
        delayed(incremental_for_subject)(cfg, state.prepared, s) for s in state.prepared.subjects())
    entries = [e for log in logs for e in log]
    out = Path(cfg.output_dir) / "reports"
    out.mkdir(parents=True, exist_ok=True)
    with (out / "incremental.jsonl").open("w") as fh:
        for e in entries:
            fh.write(json.dumps(e, sort_keys=True) + "\n")
    header = ["subject", "chunk", "rows", "injected", "drift_detected", "explanation", "action",
              "requested_labels", "whole_chunk_labels", "repaired_detected", "label_accuracy",
              "ensemble_size", "test_accuracy"]
    _write_csv(out / "incremental.csv", header,
               [[_fmt(e[h]) if e[h] is not None else "" for h in header] for e in entries])
    return out / "incremental.csv"


def run_report(cfg: ExperimentConfig) -> list[Path]:
    path = Path(cfg.output_dir) / "reports" / "sweep.csv"
    if not path.exists():
        raise StateError(f"missing {path}; run the sweep stage first")
    return emit_report(read_sweep_csv(path), path.parent, cfg.scenario_ids, cfg.activity_names)
