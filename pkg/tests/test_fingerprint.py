from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relevance_drift._seeding import derive_seed
from relevance_drift.drift_lab import (
    SyntheticConfig,
    clean_label_mix,
    corrupt_labels,
    generate_synthetic,
    split_three_parts,
    standard_scenarios,
)
from relevance_drift.errors import BadArgument
from relevance_drift.features import extract_windows
from relevance_drift.fingerprint import (
    NO_DRIFT,
    THRESHOLD_FLOOR,
    UNKNOWN,
    DriftSignature,
    calibrate_thresholds,
    detect_and_explain,
    explain,
    load_signatures,
    relevance_diff,
    save_signatures,
    select_signatures,
)
from relevance_drift.matrix import FeatureMatrix
from relevance_drift.trees import RelevanceProfile, TrainConfig, predictor_importance, train

# average clean relevance and worst-case differences for 20 features, as published
CLEAN = [0.14, 0.04, 0.10, 0.02, 0.05, 0.01, 0.04, 0.06, 0.04, 0.003,
         0.07, 0.1, 0.01, 0.02, 0.02, 0.08, 0.03, 0.01, 0.01, 0.02]
DIFF = {
    "S1": [0.97, 0.89, 0.96, 0.78, 0.93, 0.35, 0.89, 0.94, 0.89, 0.45,
           0.93, 0.96, 0.69, 0.86, 0.79, 0.95, 0.87, 0.50, 0.56, 0.80],
    "S2": [0.21, -0.66, 0.34, -1.39, -0.46, -3.32, 0.50, -0.28, -1.08, -0.99,
           -0.50, 0.36, -0.69, -0.32, -0.14, 0.47, 0.21, -1.71, -0.41, 0.08],
    "S3": [-0.10, 0.29, -0.13, 0.22, -0.25, 0.83, -0.04, -0.41, -0.99, -0.25,
           -0.39, -0.06, -0.32, -0.98, -0.11, 0.02, -0.20, -0.77, -0.27, -0.30],
}
NAMES = [f"F{i}" for i in range(1, 21)]
PINNED_SETS = {"S1": "all", "S2": [2, 4, 6], "S3": [12, 17, 20]}


def profile(values, names=None, model_id=""):
    values = np.asarray(values, dtype=float)
    return RelevanceProfile(values, names or [f"f{i}" for i in range(values.size)], model_id)


def published_profiles():
    clean = profile(CLEAN, NAMES, "clean")
    c = np.asarray(CLEAN)
    worst = {s: profile(c * (1 - np.asarray(d)), NAMES, s) for s, d in DIFF.items()}
    return clean, worst


# ---------------------------------------------------------------- relevance_diff


def test_diff_of_profile_with_itself_is_zero():
    p = profile([0.3, 0.2, 0.5])
    dp = relevance_diff(p, p)
    assert np.array_equal(dp.values, np.zeros(3)) and dp.excluded_features == ()


def test_diff_published_fixtures():
    assert relevance_diff(profile([0.14]), profile([0.0042])).values[0] == pytest.approx(0.97, abs=1e-12)
    assert relevance_diff(profile([0.04]), profile([0.0664])).values[0] == pytest.approx(-0.66, abs=1e-12)


def test_published_worst_cases_reproduce_their_differences():
    clean, worst = published_profiles()
    for s, d in DIFF.items():
        assert np.allclose(relevance_diff(clean, worst[s]).values, d, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), c=st.floats(0.01, 100))
def test_scale_covariance(seed, c):
    rng = np.random.default_rng(seed)
    clean = profile(rng.uniform(0.01, 1.0, size=8))
    other = profile(rng.uniform(0.0, 1.0, size=8))
    base = relevance_diff(clean, other).values
    scaled = relevance_diff(clean, profile(c * other.values)).values
    assert np.allclose(scaled, 1 - c * (1 - base), rtol=1e-9, atol=1e-9)


def test_near_zero_clean_relevance_is_excluded():
    clean = profile([1.0, 5e-5, 0.0, 0.5])
    dp = relevance_diff(clean, profile([0.5, 0.3, 0.2, 0.5]))
    assert dp.excluded_features == (1, 2)
    assert np.isnan(dp.values[1]) and np.isnan(dp.values[2])
    assert dp.signature_sum([0, 1, 2, 3]) == pytest.approx(0.5)


def test_dimension_mismatch_rejected():
    with pytest.raises(BadArgument):
        relevance_diff(profile([0.1, 0.2]), profile([0.1, 0.2, 0.3]))
    with pytest.raises(BadArgument):
        relevance_diff(profile([0.1, 0.2], ["a", "b"]), profile([0.1, 0.2], ["b", "a"]))


# ---------------------------------------------------------------- signatures


def test_orthogonal_two_scenario_case():
    clean = profile([1.0, 1.0])
    worst = {"A": profile([0.0, 2.0]), "B": profile([2.0, 0.0])}  # diffs (+1,-1) and (-1,+1)
    sel = select_signatures(clean, worst, k_per_scenario=1, global_coverage=1.1)
    by = {g.scenario_id: g for g in sel.signatures}
    assert by["A"].feature_indices == (0,) and by["B"].feature_indices == (1,)
    assert by["A"].expected_sign_pattern == {"A": 1, "B": -1}


def test_f2_is_sign_unique_for_s2():
    clean, worst = published_profiles()
    sel = select_signatures(clean, worst, k_per_scenario=20)
    s2 = next(g for g in sel.signatures if g.scenario_id == "S2")
    assert 1 in s2.feature_indices  # F2: +0.89, -0.66, +0.29
    for i in s2.feature_indices:
        assert DIFF["S2"][i] < 0 < min(DIFF["S1"][i], DIFF["S3"][i])


def test_s1_gets_the_global_signature():
    clean, worst = published_profiles()
    s1 = next(g for g in select_signatures(clean, worst).signatures if g.scenario_id == "S1")
    assert s1.is_global and s1.feature_indices == tuple(range(20))


def test_override_pins_published_sets_and_reproduces_arrow_table():
    clean, worst = published_profiles()
    sel = select_signatures(clean, worst, overrides=PINNED_SETS)
    by = {g.scenario_id: g for g in sel.signatures}
    assert [i + 1 for i in by["S2"].feature_indices] == [2, 4, 6]
    assert [i + 1 for i in by["S3"].feature_indices] == [12, 17, 20]
    assert by["S1"].feature_indices == tuple(range(20))
    # rows: signature; columns: scenario
    assert by["S1"].expected_sign_pattern == {"S1": 1, "S2": -1, "S3": -1}
    assert by["S2"].expected_sign_pattern == {"S1": 1, "S2": -1, "S3": 1}
    assert by["S3"].expected_sign_pattern == {"S1": 1, "S2": 1, "S3": -1}


def test_scenario_without_unique_feature_is_dropped():
    clean = profile([1.0, 1.0])
    worst = {"A": profile([0.5, 0.5]), "B": profile([0.5, 0.5]), "C": profile([2.0, 2.0])}
    sel = select_signatures(clean, worst, global_coverage=1.1)
    assert set(sel.dropped) == {"A", "B"}
    assert [g.scenario_id for g in sel.signatures] == ["C"]


def test_selection_needs_two_scenarios():
    with pytest.raises(BadArgument):
        select_signatures(profile([1.0]), {"A": profile([0.5])})


def test_signature_validation_and_round_trip(tmp_path):
    with pytest.raises(BadArgument):
        DriftSignature("S2", ())
    with pytest.raises(BadArgument):
        DriftSignature("S2", (1,), threshold=0.0)
    sigs = [DriftSignature("S2", (5, 1, 3), {"S1": 1, "S2": -1, "S3": 1}, 0.25),
            DriftSignature("S1", tuple(range(4)), {"S1": 1, "S2": -1, "S3": -1}, 1.5, True)]
    save_signatures(sigs, tmp_path / "s.json")
    back = load_signatures(tmp_path / "s.json")
    assert back == sigs
    assert back[0].feature_indices == (1, 3, 5)


# ---------------------------------------------------------------- explanation


def arrow_signatures(threshold=0.5):
    return [
        DriftSignature("S1", tuple(range(20)), {"S1": 1, "S2": -1, "S3": -1}, threshold, True),
        DriftSignature("S2", (1, 3, 5), {"S1": 1, "S2": -1, "S3": 1}, threshold),
        DriftSignature("S3", (11, 16, 19), {"S1": 1, "S2": 1, "S3": -1}, threshold),
    ]


@pytest.mark.parametrize("signs, expected", [((-1, -1, 1), "S2"), ((1, 1, 1), "S1"), ((-1, 1, -1), "S3"),
                                             ((-1, -1, -1), UNKNOWN)])
def test_arrow_patterns_name_the_scenario(signs, expected):
    sums = {s: 2.0 * v for s, v in zip(("S1", "S2", "S3"), signs)}
    v = explain(sums, arrow_signatures())
    assert v.drift_detected and v.explanation == expected


def test_published_worst_cases_are_explained():
    clean, worst = published_profiles()
    sigs = select_signatures(clean, worst, overrides=PINNED_SETS).signatures
    for s in DIFF:
        assert detect_and_explain(clean, worst[s], sigs).explanation == s


def test_only_significant_signatures_constrain_the_match():
    # the S1 signature is below threshold, so (., down, up) alone picks S2
    v = explain({"S1": 0.1, "S2": -2.0, "S3": 2.0}, arrow_signatures())
    assert v.explanation == "S2" and v.margins["S1"] < 0


def test_nearest_mode_resolves_single_disagreement():
    sums = {"S1": -2.0, "S2": -2.0, "S3": -2.0}
    assert explain(sums, arrow_signatures()).explanation == UNKNOWN
    # S2 and S3 each disagree once, so nearest stays undecided; flip S3 to break the tie
    assert explain(sums, arrow_signatures(), mode="nearest").explanation == UNKNOWN
    assert explain({"S1": -2.0, "S2": -2.0, "S3": 0.6}, arrow_signatures(), "nearest").explanation == "S2"
    with pytest.raises(BadArgument):
        explain(sums, arrow_signatures(), mode="closest")


def test_candidate_equal_to_clean_is_not_drift():
    clean, _ = published_profiles()
    v = detect_and_explain(clean, clean, arrow_signatures(THRESHOLD_FLOOR))
    assert not v.drift_detected and v.explanation == NO_DRIFT
    assert all(x == 0.0 for x in v.signature_sums.values())


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_verdict_invariant_to_feature_permutation(seed):
    rng = np.random.default_rng(seed)
    d = 12
    clean = profile(rng.uniform(0.05, 1.0, size=d))
    cand = profile(clean.values * rng.uniform(0.0, 2.5, size=d))
    sigs = [DriftSignature("A", (0, 1, 2), {"A": -1, "B": 1}, 0.3),
            DriftSignature("B", (5, 7, 9), {"A": 1, "B": -1}, 0.3)]
    perm = rng.permutation(d)
    inv = np.argsort(perm)
    p_sigs = [DriftSignature(g.scenario_id, tuple(inv[list(g.feature_indices)]), g.expected_sign_pattern, g.threshold)
              for g in sigs]
    a = detect_and_explain(clean, cand, sigs)
    b = detect_and_explain(profile(clean.values[perm]), profile(cand.values[perm]), p_sigs)
    assert a.explanation == b.explanation and a.drift_detected == b.drift_detected
    for k in a.signature_sums:
        assert a.signature_sums[k] == pytest.approx(b.signature_sums[k], abs=1e-12)


# ---------------------------------------------------------------- calibration


def small_matrix(seed=0, n=90, d=5):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 3
    X = rng.normal(size=(n, d))
    X[:, 0] += y
    X[:, 1] -= y
    return FeatureMatrix(X, y, np.zeros(n), [f"f{i}" for i in range(d)])


def test_pinned_identical_replicas_give_floor_threshold():
    m = small_matrix()
    cfg = TrainConfig(n_trees=5)
    label_seed, model_seed = 11, 12
    ref_rows = clean_label_mix(m, label_seed, 3)
    ref = predictor_importance(train(ref_rows, cfg, model_seed, 3))
    sigs = [DriftSignature("A", (0, 1), {"A": 1, "B": -1}), DriftSignature("B", (2, 3), {"A": -1, "B": 1})]
    cal = calibrate_thresholds(m, sigs, ref, train_config=cfg, n_classes=3,
                               replica_seeds=[(label_seed, model_seed)] * 10)
    assert all(g.threshold == THRESHOLD_FLOOR for g in cal.signatures)
    assert all(v == 0.0 for vals in cal.replica_sums.values() for v in vals)


def test_calibration_bounds_every_replica_and_needs_ten():
    m = small_matrix(1)
    cfg = TrainConfig(n_trees=5)
    ref = predictor_importance(train(clean_label_mix(m, 0, 3), cfg, 0, 3))
    sigs = [DriftSignature("A", (0, 1)), DriftSignature("B", (2, 3, 4))]
    cal = calibrate_thresholds(m, sigs, ref, n_replicas=10, seed=3, train_config=cfg, n_classes=3)
    for g in cal.signatures:
        assert np.all(np.abs(cal.replica_sums[g.scenario_id]) <= g.threshold)
    with pytest.raises(BadArgument):
        calibrate_thresholds(m, sigs, ref, n_replicas=9, train_config=cfg, n_classes=3)


# ---------------------------------------------------------------- end to end


@pytest.fixture(scope="module")
def synthetic_subjects():
    recs = generate_synthetic(SyntheticConfig(subjects=2), seed=derive_seed(0, "synthetic"))
    # a fixed stride over the bank stands in for forward selection here
    cols = list(range(0, 294, 15))[:20]
    return [extract_windows(r).select_features(cols) for r in recs]


def test_worst_case_scenarios_are_explained_end_to_end(synthetic_subjects):
    """Learned signatures name each scenario for fresh ratio-1.0 models."""
    C, cfg = 7, TrainConfig(n_trees=50)
    scen = standard_scenarios()
    wrong = []
    for k, m in enumerate(synthetic_subjects):
        sp = split_three_parts(m, k)
        base = clean_label_mix(sp.train, derive_seed(k, "mix"), C)
        ref = predictor_importance(train(base, cfg, derive_seed(k, "ref"), C))
        worst = {s: predictor_importance(train(corrupt_labels(base, sc.at(1.0, derive_seed(k, s)), C), cfg,
                                                derive_seed(k, s, "model"), C)) for s, sc in scen.items()}
        sigs = select_signatures(ref, worst).signatures
        sigs = calibrate_thresholds(sp.train, sigs, ref, 30, derive_seed(k, "cal"), cfg, C).signatures
        for s, sc in scen.items():
            rows = clean_label_mix(sp.train, derive_seed(k, s, "fresh-mix"), C)
            cand = predictor_importance(train(corrupt_labels(rows, sc.at(1.0, derive_seed(k, s, "fresh")), C), cfg,
                                              derive_seed(k, s, "fresh-model"), C))
            got = detect_and_explain(ref, cand, sigs).explanation
            if got != s:
                wrong.append((k, s, got))
    assert not wrong, f"misexplained (subject, scenario, verdict): {wrong}"
