"""Label-corruption scenarios, the three-part split, and a synthetic activity generator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._seeding import derive_seed
from .errors import BadArgument, InsufficientData
from .features import ACTIVITY_NAMES, SensorRecording
from .matrix import FeatureMatrix

UNIFORM_NOISE = "uniform_noise"
CLASS_CONFUSION = "class_confusion"
CLEAN_NOISE_RATIO = 0.05


@dataclass(frozen=True)
class DriftScenario:
    """A label-corruption recipe.

    ``uniform_noise`` redraws the labels of a random ``floor(ratio * n)`` rows
    uniformly over all classes (a redraw may return the original label unless
    ``strictly_wrong``). ``class_confusion`` relabels ``floor(ratio * n_source)``
    rows of ``source_class`` as ``target_class``.
    """

    kind: str
    ratio: float = 1.0
    seed: int = 0
    source_class: int | None = None
    target_class: int | None = None
    strictly_wrong: bool = False
    name: str = ""

    def __post_init__(self):
        if self.kind not in (UNIFORM_NOISE, CLASS_CONFUSION):
            raise BadArgument(f"unknown scenario kind {self.kind!r}")
        if not 0.0 <= self.ratio <= 1.0:
            raise BadArgument("ratio must lie in [0, 1]")
        if self.kind == CLASS_CONFUSION:
            if self.source_class is None or self.target_class is None:
                raise BadArgument("class_confusion needs source_class and target_class")
            if self.source_class == self.target_class:
                raise BadArgument("source_class and target_class must differ")

    def at(self, ratio: float, seed: int | None = None) -> "DriftScenario":
        return DriftScenario(self.kind, float(ratio), self.seed if seed is None else seed,
                             self.source_class, self.target_class, self.strictly_wrong, self.name)

    @property
    def affected_classes(self) -> tuple:
        if self.kind == CLASS_CONFUSION:
            return (self.source_class, self.target_class)
        return ()

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "ratio": self.ratio, "seed": self.seed,
                "source_class": self.source_class, "target_class": self.target_class,
                "strictly_wrong": self.strictly_wrong}


def standard_scenarios(activity_names=ACTIVITY_NAMES, bindings: dict | None = None) -> dict[str, DriftScenario]:
    """S1 uniform noise, S2 biking->walking, S3 upstairs->downstairs (names resolvable via ``bindings``)."""
    bindings = bindings or {"S2": ("biking", "walking"), "S3": ("upstairs", "downstairs")}
    index = {a: i for i, a in enumerate(activity_names)}
    out = {"S1": DriftScenario(UNIFORM_NOISE, 1.0, name="S1")}
    for sid, (src, dst) in sorted(bindings.items()):
        if src not in index or dst not in index:
            raise BadArgument(f"scenario {sid}: unknown activity {src!r} or {dst!r}")
        out[sid] = DriftScenario(CLASS_CONFUSION, 1.0, source_class=index[src], target_class=index[dst], name=sid)
    return out


def corrupt_labels(m: FeatureMatrix, s: DriftScenario, n_classes: int | None = None) -> FeatureMatrix:
    m.ensure_trainable("label corruption")
    rng = np.random.default_rng(derive_seed(s.seed, "corrupt", s.kind))
    labels = m.labels.copy()
    if s.kind == UNIFORM_NOISE:
        C = int(n_classes) if n_classes is not None else int(labels.max(initial=-1)) + 1
        if C < 1:
            return m
        k = int(np.floor(s.ratio * m.n_rows))
        rows = np.sort(rng.choice(m.n_rows, size=k, replace=False))
        if s.strictly_wrong and C > 1:
            shift = rng.integers(1, C, size=k)
            labels[rows] = (labels[rows] + shift) % C
        else:
            labels[rows] = rng.integers(0, C, size=k)
        return m.with_labels(labels)
    source = np.flatnonzero(labels == s.source_class)
    if source.size == 0 or (n_classes is not None and max(s.source_class, s.target_class) >= n_classes):
        raise BadArgument(f"class {s.source_class} absent from the matrix")
    k = int(np.floor(s.ratio * source.size))
    rows = rng.choice(source, size=k, replace=False)
    labels[rows] = s.target_class
    return m.with_labels(labels)


def clean_label_mix(m: FeatureMatrix, seed: int, n_classes: int | None = None) -> FeatureMatrix:
    """95% true labels, 5% redrawn uniformly (the clean-model recipe)."""
    return corrupt_labels(m, DriftScenario(UNIFORM_NOISE, CLEAN_NOISE_RATIO, seed=seed), n_classes)


@dataclass
class SplitResult:
    train_a: FeatureMatrix
    train_b: FeatureMatrix
    test: FeatureMatrix
    dropped: FeatureMatrix

    def __iter__(self):
        return iter((self.train_a, self.train_b, self.test))

    @property
    def train(self) -> FeatureMatrix:
        return FeatureMatrix.concat([self.train_a, self.train_b])


def split_three_parts(m: FeatureMatrix, seed: int) -> SplitResult:
    """Deal every class's rows into three parts of equal per-class size.

    Part three is tagged as the test partition; leftovers are returned as
    ``dropped``.
    """
    rng = np.random.default_rng(derive_seed(seed, "split"))
    parts = [[], [], []]
    dropped = []
    for c in np.unique(m.labels):
        rows = np.flatnonzero(m.labels == c)
        if rows.size < 3:
            raise InsufficientData(f"class {c} has {rows.size} rows; at least 3 required")
        rows = rows[rng.permutation(rows.size)]
        per = rows.size // 3
        for p in range(3):
            parts[p].append(rows[p * per:(p + 1) * per])
        dropped.append(rows[3 * per:])
    tags = ("train_a", "train_b", "test")
    out = [m.take(np.sort(np.concatenate(parts[p]))).with_partition(tags[p]) for p in range(3)]
    rest = np.sort(np.concatenate(dropped)) if dropped else np.array([], dtype=np.int64)
    return SplitResult(out[0], out[1], out[2], m.take(rest).with_partition("dropped"))


# ---------------------------------------------------------------- synthetic data


@dataclass(frozen=True)
class Archetype:
    """Per-activity signal recipe: offsets plus sinusoid components per sensor."""

    acc_offset: tuple
    acc_components: tuple  # ((freq_hz, (ax, ay, az)), ...)
    gyro_offset: tuple
    gyro_components: tuple
    acc_noise: float
    gyro_noise: float


DEFAULT_ARCHETYPES = {
    "walking": Archetype((0.0, -1.0, 0.05), ((1.9, (0.35, 0.50, 0.25)), (3.8, (0.10, 0.20, 0.10))),
                         (0.0, 0.0, 0.0), ((0.95, (1.00, 0.40, 0.60)),), 0.05, 0.10),
    "sitting": Archetype((0.2, -0.3, 0.9), ((0.3, (0.02, 0.02, 0.02)),),
                         (0.0, 0.0, 0.0), ((0.3, (0.03, 0.03, 0.03)),), 0.02, 0.03),
    "standing": Archetype((0.05, -0.98, 0.1), ((0.3, (0.03, 0.03, 0.03)),),
                          (0.0, 0.0, 0.0), ((0.3, (0.04, 0.04, 0.04)),), 0.02, 0.03),
    "jogging": Archetype((0.0, -1.0, 0.1), ((2.8, (0.90, 1.40, 0.70)), (5.6, (0.30, 0.50, 0.20))),
                         (0.0, 0.0, 0.0), ((1.4, (2.50, 1.00, 1.60)),), 0.15, 0.25),
    "biking": Archetype((0.3, -0.6, 0.6), ((1.3, (0.25, 0.20, 0.35)),),
                        (0.0, 0.0, 0.0), ((1.3, (0.50, 1.20, 0.40)),), 0.08, 0.15),
    "upstairs": Archetype((0.0, -1.0, 0.1), ((1.6, (0.30, 0.45, 0.30)), (3.2, (0.10, 0.15, 0.10))),
                          (0.0, 0.0, 0.0), ((0.8, (0.80, 0.35, 0.50)),), 0.06, 0.12),
    "downstairs": Archetype((0.0, -1.0, 0.05), ((1.75, (0.38, 0.55, 0.28)), (3.5, (0.14, 0.20, 0.12))),
                            (0.0, 0.0, 0.0), ((0.87, (0.90, 0.40, 0.55)),), 0.07, 0.13),
}


@dataclass(frozen=True)
class SyntheticConfig:
    activity_names: tuple = tuple(ACTIVITY_NAMES)
    subjects: int = 5
    archetypes: dict = field(default_factory=lambda: dict(DEFAULT_ARCHETYPES))
    subject_amplitude_std: float = 0.10
    subject_frequency_std: float = 0.05
    modulation_depth: float = 0.30
    modulation_period_s: float = 2.0
    frequency_modulation_depth: float = 0.0
    orientation_drift: float = 0.0
    noise_scale: float = 1.0
    duration_per_class_s: float = 120.0
    sample_rate_hz: float = 50.0

    @property
    def class_count(self) -> int:
        return len(self.activity_names)

    def validate(self, window_seconds: float = 4.2, slide_seconds: float = 1.4):
        missing = [a for a in self.activity_names if a not in self.archetypes]
        if missing:
            raise BadArgument(f"no archetype for activities {missing}")
        nyquist = self.sample_rate_hz / 2.0
        # allow for the subject frequency perturbation (3 sigma)
        margin = 1.0 + 3.0 * self.subject_frequency_std
        for name in self.activity_names:
            a = self.archetypes[name]
            for f, _ in a.acc_components + a.gyro_components:
                if f * margin >= nyquist:
                    raise BadArgument(f"{name}: component at {f} Hz violates Nyquist ({nyquist} Hz)")
        n = int(round(self.duration_per_class_s * self.sample_rate_hz))
        wl = int(round(window_seconds * self.sample_rate_hz))
        sl = int(round(slide_seconds * self.sample_rate_hz))
        if n < wl or (n - wl) // sl + 1 < 30:
            raise BadArgument("duration_per_class_s yields fewer than 30 windows per class")

    @classmethod
    def from_dict(cls, data: dict | None) -> "SyntheticConfig":
        data = dict(data or {})
        if "archetypes" in data:
            arch = dict(DEFAULT_ARCHETYPES)
            for name, spec in data["archetypes"].items():
                arch[name] = Archetype(
                    tuple(spec["acc_offset"]),
                    tuple((f, tuple(a)) for f, a in spec["acc_components"]),
                    tuple(spec["gyro_offset"]),
                    tuple((f, tuple(a)) for f, a in spec["gyro_components"]),
                    float(spec["acc_noise"]),
                    float(spec["gyro_noise"]),
                )
            data["archetypes"] = arch
        if "activity_names" in data:
            data["activity_names"] = tuple(data["activity_names"])
        return cls(**data)


def _smooth_envelope(rng, n, fs, period_s):
    """Piecewise-linear random envelope in [-1, 1] with knots every ``period_s``."""
    step = max(2, int(round(period_s * fs)))
    knots = rng.uniform(-1.0, 1.0, size=n // step + 2)
    return np.interp(np.arange(n), np.arange(knots.size) * step, knots)


def _sensor_block(rng, offset, components, noise, n, fs, amp_gain, freq_gain, cfg):
    t = np.arange(n) / fs
    out = np.tile(np.asarray(offset, dtype=np.float64), (n, 1))
    if cfg.orientation_drift > 0:
        # slow wander of the sensor orientation, shared by the offset only
        for axis in range(3):
            out[:, axis] += cfg.orientation_drift * _smooth_envelope(rng, n, fs, 8 * cfg.modulation_period_s)
    for f, amps in components:
        freq = f * freq_gain
        phase = rng.uniform(0, 2 * np.pi)
        if cfg.frequency_modulation_depth > 0:
            # slow cadence drift: integrate the instantaneous frequency
            inst = freq * (1.0 + cfg.frequency_modulation_depth * _smooth_envelope(rng, n, fs, 4 * cfg.modulation_period_s))
            wave = np.sin(2 * np.pi * np.cumsum(inst) / fs + phase)
        else:
            wave = np.sin(2 * np.pi * freq * t + phase)
        for axis, a in enumerate(amps):
            env = 1.0
            if cfg.modulation_depth > 0:
                env = 1.0 + cfg.modulation_depth * _smooth_envelope(rng, n, fs, cfg.modulation_period_s)
            out[:, axis] += a * amp_gain[axis] * env * wave
    if noise > 0 and cfg.noise_scale > 0:
        out += rng.normal(0.0, noise * cfg.noise_scale, size=out.shape)
    return out


def generate_synthetic(cfg: SyntheticConfig | None = None, seed: int = 0) -> list[SensorRecording]:
    """One recording per subject: every activity in turn for ``duration_per_class_s``."""
    cfg = cfg or SyntheticConfig()
    cfg.validate()
    fs = cfg.sample_rate_hz
    n = int(round(cfg.duration_per_class_s * fs))
    recordings = []
    for subj in range(cfg.subjects):
        chans, labels = [], []
        for c, name in enumerate(cfg.activity_names):
            a = cfg.archetypes[name]
            rng = np.random.default_rng(derive_seed(seed, "synthetic", subj, name))
            amp_gain = 1.0 + cfg.subject_amplitude_std * rng.standard_normal(6)
            freq_gain = 1.0 + cfg.subject_frequency_std * rng.standard_normal()
            acc = _sensor_block(rng, a.acc_offset, a.acc_components, a.acc_noise, n, fs, amp_gain[:3], freq_gain, cfg)
            gyro = _sensor_block(rng, a.gyro_offset, a.gyro_components, a.gyro_noise, n, fs, amp_gain[3:], freq_gain, cfg)
            chans.append(np.hstack([acc, gyro]))
            labels.append(np.full(n, c, dtype=np.int64))
        recordings.append(SensorRecording(f"subject{subj + 1:02d}", np.vstack(chans), np.concatenate(labels),
                                          fs, list(cfg.activity_names)))
    return recordings
