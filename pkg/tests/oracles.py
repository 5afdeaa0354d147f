"""Independent plain-Python references shared by the unit and acceptance tests."""

from __future__ import annotations

import numpy as np

from relevance_drift.matrix import FeatureMatrix


def fm(X, y):
    X = np.asarray(X, dtype=float)
    return FeatureMatrix(X, np.asarray(y), np.zeros(len(y)), [f"f{i}" for i in range(X.shape[1])])


def random_problem(seed, n=None, d=None, C=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(10, 201))
    d = d or int(rng.integers(1, 11))
    C = C or int(rng.integers(2, 5))
    X = rng.normal(size=(n, d))
    # round some columns so that ties and repeated values occur
    X[:, ::2] = np.round(X[:, ::2], 1)
    y = rng.integers(0, C, size=n)
    return fm(X, y), C


def oracle_importance(doc: dict) -> np.ndarray:
    """Recompute importance by walking the serialised trees node by node."""
    d = doc["n_features"]
    total = np.zeros(d)
    for t in doc["trees"]:
        counts = [list(map(float, c)) for c in t["counts"]]

        def risk(node):
            size = sum(counts[node])
            root = sum(counts[0])
            gini = 1.0 - sum((c / size) ** 2 for c in counts[node])
            return size / root * gini

        per = [0.0] * d
        branches = 0
        for node, f in enumerate(t["feature"]):
            if f < 0:
                continue
            branches += 1
            per[f] += risk(node) - risk(t["left"][node]) - risk(t["right"][node])
        if branches:
            total += np.array(per) / branches
    return total / len(doc["trees"])


def naive_percentile(values, p):
    s = sorted(values)
    h = (len(s) - 1) * p / 100.0
    lo = int(h // 1)
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (h - lo) * (s[hi] - s[lo])


def naive_time_features(x):
    """Plain-Python reference for every time-domain feature of one window."""
    x = [float(v) for v in x]
    n = len(x)
    mean = sum(x) / n
    out = {
        "std": (sum((v - mean) ** 2 for v in x) / (n - 1)) ** 0.5,
        "min": min(x),
        "max": max(x),
        "median": naive_percentile(x, 50),
    }
    for p in (10, 25, 75, 90):
        out[f"p{p}"] = naive_percentile(x, p)
    for p in (10, 25):
        level = out[f"p{p}"]
        out[f"sum_below_p{p}"] = sum(v for v in x if v < level)
        out[f"sqsum_below_p{p}"] = sum(v * v for v in x if v < level)
    for p in (75, 90):
        level = out[f"p{p}"]
        out[f"sum_above_p{p}"] = sum(v for v in x if v > level)
        out[f"sqsum_above_p{p}"] = sum(v * v for v in x if v > level)
    for p in (10, 25, 75, 90):
        level = out[f"p{p}"]
        out[f"cross_p{p}"] = sum(1 for a, b in zip(x[:-1], x[1:]) if (a < level) != (b < level))
    return out
