from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relevance_drift.errors import BadArgument, EmptyInput
from relevance_drift.incremental import (
    ChunkPolicy,
    EnsembleModel,
    ensemble_predict,
    init,
    label_chunk,
    learnpp_weight,
    process_chunk,
)
from relevance_drift.matrix import FeatureMatrix
from relevance_drift.trees import TrainConfig, train

C = 6


class FixedModel:
    """Base-model stand-in whose posterior is a function of the input rows."""

    def __init__(self, fn, n_features=2, class_count=2, model_id="fixed"):
        self.fn = fn
        self.n_features = n_features
        self.class_count = class_count
        self.model_id = model_id

    def predict_proba(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.asarray([self.fn(x) for x in X], dtype=float)


def constant(post, d=2):
    post = np.asarray(post, dtype=float)
    return FixedModel(lambda _x: post, d, post.size)


def chunk(seed=0, n=120, d=4):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % C
    X = rng.normal(scale=0.3, size=(n, d))
    X[:, 0] += y
    return FeatureMatrix(X, y, np.zeros(n), [f"f{i}" for i in range(d)])


@pytest.fixture(scope="module")
def base_model():
    return train(chunk(1), TrainConfig(n_trees=10), 0, C)


def test_init_is_a_single_unit_weight_model(base_model):
    e = init(base_model)
    assert e.weights == [1.0] and e.chunk_log == [] and len(e) == 1
    X = chunk(2).X
    assert np.array_equal(e.predict_proba(X), base_model.predict_proba(X))
    for x in X[:10]:
        label, post = ensemble_predict(e, x)
        assert label == base_model.predict_labels(x[None, :])[0]
        assert np.array_equal(post, base_model.predict_proba(x)[0])


def test_two_opposite_models_tie_to_class_zero():
    e = EnsembleModel([constant([1, 0]), constant([0, 1])], [1.0, 1.0])
    label, post = ensemble_predict(e, np.zeros(2))
    assert label == 0 and np.array_equal(post, [0.5, 0.5])


def test_weighted_mean_matches_hand_computation():
    posts = [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.2, 0.2, 0.6]]
    e = EnsembleModel([constant(p) for p in posts], [2.0, 1.0, 1.0])
    label, post = ensemble_predict(e, np.zeros(2))
    want = (2 * np.array(posts[0]) + posts[1] + posts[2]) / 4
    assert np.allclose(post, want, atol=1e-15) and label == 0


@settings(max_examples=50, deadline=None)
@given(w=st.lists(st.floats(0.01, 10), min_size=3, max_size=3), c=st.floats(0.01, 100))
def test_uniform_weight_rescaling_changes_nothing(w, c):
    posts = [[0.7, 0.3], [0.2, 0.8], [0.45, 0.55]]
    a = EnsembleModel([constant(p) for p in posts], list(w))
    b = EnsembleModel([constant(p) for p in posts], [c * x for x in w])
    la, pa = ensemble_predict(a, np.zeros(2))
    lb, pb = ensemble_predict(b, np.zeros(2))
    assert la == lb and np.allclose(pa, pb, rtol=1e-12, atol=1e-12)


def test_dimension_mismatch(base_model):
    e = init(base_model)
    with pytest.raises(BadArgument):
        ensemble_predict(e, np.zeros(3))
    with pytest.raises(BadArgument):
        process_chunk(e, chunk(d=5))
    with pytest.raises(EmptyInput):
        process_chunk(e, chunk().take(np.array([], dtype=int)))


def test_ensemble_invariants():
    with pytest.raises(BadArgument):
        EnsembleModel([], [])
    with pytest.raises(BadArgument):
        EnsembleModel([constant([1, 0])], [1.0, 2.0])
    with pytest.raises(BadArgument):
        EnsembleModel([constant([1, 0])], [-1.0])


def test_learnpp_weight():
    assert learnpp_weight(0.25) == pytest.approx(math.log(3))
    assert learnpp_weight(0.0) == pytest.approx(math.log(1e6))
    assert learnpp_weight(0.5) == 0.0
    assert learnpp_weight(0.8) == 0.0
    assert learnpp_weight(1.0) == 0.0


def test_threshold_zero_queries_nothing(base_model):
    e = init(base_model)
    res = process_chunk(e, chunk(3), ChunkPolicy.posterior_gate(0.0), TrainConfig(n_trees=5))
    assert not res.queried_mask.any()
    assert np.array_equal(res.training_labels, res.predicted_labels)


def test_threshold_above_one_trains_on_true_labels(base_model):
    e = init(base_model)
    ch = chunk(4)
    res = process_chunk(e, ch, ChunkPolicy.posterior_gate(1.01), TrainConfig(n_trees=5), seed=3)
    assert res.queried_mask.all()
    assert np.array_equal(res.training_labels, ch.labels)
    direct = train(ch, TrainConfig(n_trees=5), 3, C)
    assert e.base_models[-1].model_id == direct.model_id == res.new_model_id


def test_confident_confusion_is_queried_and_corrected():
    ch = chunk(5)

    def post(x):
        p = np.zeros(C)
        cls = int(round(x[0]))
        if cls == 1:
            p[5], p[1] = 0.9, 0.1  # confidently wrong
        else:
            p[min(max(cls, 0), C - 1)] = 1.0
        return p

    e = EnsembleModel([FixedModel(post, 4, C)], [1.0])
    res = process_chunk(e, ch, ChunkPolicy.posterior_gate(0.95), TrainConfig(n_trees=5))
    confused = res.predicted_labels == 5
    confused &= ch.labels == 1
    assert confused.any()
    assert np.all(res.queried_mask[confused])
    assert np.all(res.training_labels[confused] == 1)
    assert not res.queried_mask[res.posteriors.max(axis=1) >= 0.95].any()


def test_size_grows_by_one_per_chunk(base_model):
    e = init(base_model)
    for k in range(3):
        res = process_chunk(e, chunk(10 + k), cfg=TrainConfig(n_trees=3), seed=k)
        assert len(e) == k + 2 and len(e.weights) == k + 2
        assert e.chunk_log[-1]["chunk"] == k and e.chunk_log[-1]["model_id"] == res.new_model_id
        assert e.weights[-1] == pytest.approx(learnpp_weight(res.error))


def test_zero_weight_ensemble_falls_back_to_even_vote():
    e = EnsembleModel([constant([1, 0]), constant([0, 1])], [0.0, 0.0])
    assert np.array_equal(e.predict_proba(np.zeros((1, 2)))[0], [0.5, 0.5])
    u = EnsembleModel([constant([1, 0]), constant([0, 1])], [3.0, 1.0], uniform_weights=True)
    assert np.array_equal(u.predict_proba(np.zeros((1, 2)))[0], [0.5, 0.5])


@settings(max_examples=30, deadline=None)
@given(a=st.floats(0, 1.2), b=st.floats(0, 1.2))
def test_queried_fraction_monotone_in_threshold(base_model, a, b):
    lo, hi = sorted((a, b))
    e = init(base_model)
    ch = chunk(6)
    q_lo = label_chunk(e, ch, ChunkPolicy.posterior_gate(lo))[2]
    q_hi = label_chunk(e, ch, ChunkPolicy.posterior_gate(hi))[2]
    assert q_lo.sum() <= q_hi.sum() and not np.any(q_lo & ~q_hi)


def test_posterior_gate_requires_labeler():
    with pytest.raises(BadArgument):
        ChunkPolicy("posterior_gate", 0.5, None)
    with pytest.raises(BadArgument):
        ChunkPolicy("oracle")
