"""Windowed feature extraction from tri-axial accelerometer and gyroscope streams.

Definitions used throughout (all per window):

* percentiles use linear interpolation between closest ranks: with the
  window sorted ascending as ``s[0..N-1]`` and ``h = (N - 1) * p / 100``,
  ``P(p) = s[floor(h)] + (h - floor(h)) * (s[floor(h) + 1] - s[floor(h)])``;
  the median is ``P(50)``;
* ``std`` is the sample standard deviation (``N - 1`` denominator);
* tail sums take values strictly below P10/P25 and strictly above P75/P90,
  the square-sum variants sum the squares of the same values;
* a crossing of level ``L`` is a consecutive pair with ``x[i] < L`` and
  ``x[i+1] >= L`` or vice versa;
* spectral features use the mean-removed window, ``P_k = |FFT_k|^2 / N`` for
  bins ``k = 1..N//2``; the dominant bin is the lowest ``argmax`` (0 when the
  window carries no power) and the four bands split ``(0, fs/2]`` evenly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadArgument, EmptyInput, InsufficientData
from .matrix import FeatureMatrix

ACTIVITY_NAMES = ["walking", "sitting", "standing", "jogging", "biking", "upstairs", "downstairs"]
CHANNELS = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"]

SIGNALS = (
    "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z",
    "acc_mag", "gyro_mag",
    "acc_xy", "acc_xz", "acc_yz", "gyro_xy", "gyro_xz", "gyro_yz",
)
PERCENTILES = (10, 25, 75, 90)
TIME_FEATURES = (
    "std", "min", "max", "median", "p10", "p25", "p75", "p90",
    "sum_below_p10", "sum_below_p25", "sum_above_p75", "sum_above_p90",
    "sqsum_below_p10", "sqsum_below_p25", "sqsum_above_p75", "sqsum_above_p90",
    "cross_p10", "cross_p25", "cross_p75", "cross_p90",
)
FREQ_FEATURES = ("spec_power", "spec_dom_bin", "spec_centroid", "band1", "band2", "band3", "band4")


@dataclass
class SensorRecording:
    subject_id: str
    channels: np.ndarray  # (n_samples, 6): acc x/y/z, gyro x/y/z
    labels: np.ndarray
    sample_rate_hz: float = 50.0
    activity_names: list[str] = field(default_factory=lambda: list(ACTIVITY_NAMES))

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.channels.ndim != 2 or self.channels.shape[1] != 6:
            raise BadArgument("channels must have shape (n_samples, 6)")
        if self.labels.shape != (self.channels.shape[0],):
            raise BadArgument("one label per sample required")
        if not self.sample_rate_hz > 0:
            raise BadArgument("sample_rate_hz must be positive")

    def __len__(self):
        return self.channels.shape[0]


@dataclass(frozen=True)
class WindowingConfig:
    window_seconds: float = 4.2
    slide_seconds: float = 1.4
    label_rule: str = "majority"  # or "strict": drop windows with mixed labels

    def __post_init__(self):
        if not 0 < self.slide_seconds <= self.window_seconds:
            raise BadArgument("need 0 < slide_seconds <= window_seconds")
        if self.label_rule not in ("majority", "strict"):
            raise BadArgument(f"unknown label_rule {self.label_rule!r}")

    def lengths(self, fs: float) -> tuple[int, int]:
        return int(round(self.window_seconds * fs)), int(round(self.slide_seconds * fs))


@dataclass(frozen=True)
class FeatureBank:
    signals: tuple = SIGNALS
    time_features: tuple = TIME_FEATURES
    freq_signals: tuple = ("acc_mag", "gyro_mag")
    n_bands: int = 4
    version: str = "hb14x20+fft2x7-v1"

    def __post_init__(self):
        unknown = set(self.signals) - set(SIGNALS)
        if unknown or not set(self.freq_signals) <= set(SIGNALS):
            raise BadArgument(f"unknown signal(s): {sorted(unknown | (set(self.freq_signals) - set(SIGNALS)))}")
        unknown_f = set(self.time_features) - set(TIME_FEATURES)
        if unknown_f:
            raise BadArgument(f"unknown time feature(s): {sorted(unknown_f)}")
        names = self.feature_names
        if len(set(names)) != len(names):
            raise BadArgument("feature bank descriptors must be unique")

    @property
    def freq_features(self) -> tuple:
        return ("spec_power", "spec_dom_bin", "spec_centroid") + tuple(f"band{b + 1}" for b in range(self.n_bands))

    @property
    def descriptors(self) -> list[tuple[str, str]]:
        out = [(s, f) for s in self.signals for f in self.time_features]
        out += [(s, f) for s in self.freq_signals for f in self.freq_features]
        return out

    @property
    def feature_names(self) -> list[str]:
        return [f"{s}__{f}" for s, f in self.descriptors]

    @property
    def dimension(self) -> int:
        return len(self.descriptors)


def derive_signals(rec: SensorRecording) -> dict[str, np.ndarray]:
    """Return the 14 derived series keyed by name, in ``SIGNALS`` order."""
    if len(rec) == 0:
        raise EmptyInput("empty recording")
    ch = rec.channels
    out = {name: ch[:, i].copy() for i, name in enumerate(CHANNELS)}
    for sensor, base in (("acc", 0), ("gyro", 3)):
        x, y, z = ch[:, base], ch[:, base + 1], ch[:, base + 2]
        out[f"{sensor}_mag"] = np.sqrt(x * x + y * y + z * z)
    for sensor, base in (("acc", 0), ("gyro", 3)):
        x, y, z = ch[:, base], ch[:, base + 1], ch[:, base + 2]
        out[f"{sensor}_xy"] = x * x + y * y
        out[f"{sensor}_xz"] = x * x + z * z
        out[f"{sensor}_yz"] = y * y + z * z
    return {name: out[name] for name in SIGNALS}


def percentile_sorted(s: np.ndarray, p: float) -> np.ndarray:
    """Linear-interpolation percentile along the last axis of pre-sorted ``s``."""
    n = s.shape[-1]
    h = (n - 1) * p / 100.0
    lo = int(np.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return s[..., lo] + frac * (s[..., hi] - s[..., lo])


def time_features(windows: np.ndarray, names=TIME_FEATURES) -> np.ndarray:
    """Time-domain features for a batch of windows, shape (n_windows, len(names))."""
    w = np.atleast_2d(windows)
    s = np.sort(w, axis=1)
    pct = {p: percentile_sorted(s, p) for p in PERCENTILES}
    cols = {}
    for name in names:
        if name == "std":
            cols[name] = w.std(axis=1, ddof=1) if w.shape[1] > 1 else np.zeros(w.shape[0])
        elif name == "min":
            cols[name] = s[:, 0]
        elif name == "max":
            cols[name] = s[:, -1]
        elif name == "median":
            cols[name] = percentile_sorted(s, 50)
        elif name.startswith("p"):
            cols[name] = pct[int(name[1:])]
        elif name.startswith("cross_"):
            below = w < pct[int(name[len("cross_p"):])][:, None]
            cols[name] = np.count_nonzero(below[:, 1:] != below[:, :-1], axis=1).astype(np.float64)
        else:
            # sum_below_p10, sqsum_above_p90, ...
            kind, side, level = name.split("_")
            L = pct[int(level[1:])][:, None]
            mask = w < L if side == "below" else w > L
            vals = w * w if kind == "sqsum" else w
            cols[name] = np.where(mask, vals, 0.0).sum(axis=1)
    return np.column_stack([cols[n] for n in names])


def spectral_features(windows: np.ndarray, fs: float, n_bands: int = 4) -> np.ndarray:
    """Spectral power, dominant bin, centroid (Hz) and ``n_bands`` band powers."""
    w = np.atleast_2d(windows)
    N = w.shape[1]
    x0 = w - w.mean(axis=1, keepdims=True)
    P = np.abs(np.fft.rfft(x0, axis=1)) ** 2 / N
    freqs = np.fft.rfftfreq(N, d=1.0 / fs)
    P, freqs = P[:, 1:], freqs[1:]
    total = P.sum(axis=1)
    has_power = total > 0
    dom = np.where(has_power, np.argmax(P, axis=1) + 1, 0).astype(np.float64)
    centroid = np.divide(P @ freqs, total, out=np.zeros_like(total), where=has_power)
    band = np.minimum((freqs / (fs / 2.0) * n_bands).astype(int), n_bands - 1)
    bands = [P[:, band == b].sum(axis=1) for b in range(n_bands)]
    return np.column_stack([total, dom, centroid] + bands)


def window_labels(labels: np.ndarray, wl: int, sl: int, n_classes: int, rule: str = "majority"):
    """Majority label per window (lowest class id on ties) and a keep-mask."""
    lw = sliding_window_view(labels, wl)[::sl]
    counts = np.stack([(lw == c).sum(axis=1) for c in range(n_classes)], axis=1)
    lab = np.argmax(counts, axis=1)
    keep = np.ones(lab.shape[0], dtype=bool) if rule == "majority" else counts.max(axis=1) == wl
    return lab, keep


def extract_windows(rec: SensorRecording, w: WindowingConfig | None = None,
                    bank: FeatureBank | None = None) -> FeatureMatrix:
    w = w or WindowingConfig()
    bank = bank or FeatureBank()
    wl, sl = w.lengths(rec.sample_rate_hz)
    if wl < 2 or sl < 1:
        raise BadArgument("window must span at least two samples")
    if len(rec) < wl:
        raise InsufficientData(f"recording of {len(rec)} samples is shorter than one window ({wl})")
    signals = derive_signals(rec)
    n_classes = max(len(rec.activity_names), int(rec.labels.max()) + 1)
    labels, keep = window_labels(rec.labels, wl, sl, n_classes, w.label_rule)
    blocks = []
    for name in bank.signals:
        blocks.append(time_features(sliding_window_view(signals[name], wl)[::sl], bank.time_features))
    for name in bank.freq_signals:
        blocks.append(spectral_features(sliding_window_view(signals[name], wl)[::sl], rec.sample_rate_hz, bank.n_bands))
    X = np.hstack(blocks)[keep]
    n = X.shape[0]
    return FeatureMatrix(
        X=X,
        labels=labels[keep],
        subject_ids=np.full(n, rec.subject_id, dtype=object),
        feature_names=bank.feature_names,
        bank_version=bank.version,
    )


def window_count(n_samples: int, wl: int, sl: int) -> int:
    return 0 if n_samples < wl else (n_samples - wl) // sl + 1
