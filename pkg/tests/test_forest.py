import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshanno.forest import (ForestModel, ForestParams, feature_importance,
                             grouped_importance, load_model, model_from_bytes,
                             model_to_bytes, save_model, train)


def pad44(X2):
    """Embed a low-dim dataset into the 44-dim schema (rest zeros)."""
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    out = np.zeros((len(X2), 44))
    out[:, :X2.shape[1]] = X2
    return out


def two_clusters(rng, n=100, gap=10.0):
    a = rng.normal(0, 1, (n, 2))
    b = rng.normal(gap, 1, (n, 2))
    X = pad44(np.vstack([a, b]))
    y = np.array([1] * n + [3] * n)
    return X, y


def test_param_defaults():
    p = ForestParams()
    assert p.n_trees == 100
    assert p.max_depth == 30
    assert p.min_samples_leaf == 1
    assert p.features_per_split == 7


def test_param_validation():
    for bad in (dict(n_trees=0), dict(max_depth=0), dict(min_samples_leaf=0),
                dict(features_per_split=0), dict(features_per_split=45)):
        with pytest.raises(ValueError):
            ForestParams(**bad)


def test_separable_clusters_perfect_training_accuracy():
    rng = np.random.default_rng(1)
    X, y = two_clusters(rng)
    model = train(X, y, params=ForestParams(n_trees=15, seed=4))
    assert (model.predict_labels(X) == y).all()


def test_training_point_high_probability():
    rng = np.random.default_rng(2)
    X, y = two_clusters(rng)
    model = train(X, y, params=ForestParams(n_trees=15, seed=4))
    cls, probs = model.predict(X[0])
    assert cls == 1
    assert probs[0] >= 0.9


def test_seed_determinism():
    rng = np.random.default_rng(3)
    X, y = two_clusters(rng, n=40)
    q = rng.normal(5, 3, (20, 44))
    p1 = train(X, y, params=ForestParams(n_trees=8, seed=11)).predict_proba(q)
    p2 = train(X, y, params=ForestParams(n_trees=8, seed=11)).predict_proba(q)
    assert np.array_equal(p1, p2)


def test_single_class_training_set():
    X = pad44(np.random.default_rng(5).normal(0, 1, (30, 3)))
    model = train(X, [4] * 30, params=ForestParams(n_trees=5, seed=0))
    cls, probs = model.predict(np.zeros(44))
    assert cls == 4
    assert probs[3] == pytest.approx(1.0)
    assert probs.sum() == pytest.approx(1.0)


def test_input_validation():
    X, y = pad44(np.zeros((4, 2))), [1, 2, 1, 2]
    with pytest.raises(ValueError, match="empty"):
        train(np.zeros((0, 44)), [])
    with pytest.raises(ValueError, match="1..6"):
        train(X, [0, 1, 2, 1])
    with pytest.raises(ValueError, match="44"):
        train(np.zeros((4, 10)), y)
    with pytest.raises(ValueError, match="lengths"):
        train(X, [1, 2])
    with pytest.raises(ValueError, match="weights"):
        train(X, y, w=[-1, 1, 1, 1])


def test_empty_forest_guard():
    model = ForestModel(params=ForestParams(), trees=[],
                        importances=np.zeros(44))
    with pytest.raises(ValueError, match="no trees"):
        model.predict(np.zeros(44))


def test_wrong_vector_length():
    rng = np.random.default_rng(6)
    X, y = two_clusters(rng, n=20)
    model = train(X, y, params=ForestParams(n_trees=3, seed=0))
    with pytest.raises(ValueError, match="44"):
        model.predict(np.zeros(10))


_model_for_props = None


def _shared_model():
    global _model_for_props
    if _model_for_props is None:
        rng = np.random.default_rng(7)
        X = rng.normal(0, 2, (90, 44))
        y = rng.integers(1, 7, 90)
        _model_for_props = train(X, y, params=ForestParams(n_trees=6, seed=1))
    return _model_for_props


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False, width=32),
                min_size=44, max_size=44))
def test_probability_simplex(vec):
    cls, probs = _shared_model().predict(np.array(vec))
    assert probs.shape == (6,)
    assert (probs >= 0).all()
    assert probs.sum() == pytest.approx(1.0, abs=1e-12)
    assert 1 <= cls <= 6
    assert cls == int(np.argmax(probs)) + 1


def test_importances_concentrate_on_informative_dim():
    rng = np.random.default_rng(9)
    # class depends on dim 0 alone; all other dims constant (useless)
    X = pad44(rng.uniform(-1, 1, (200, 1)))
    y = np.where(X[:, 0] > 0.1, 3, 1)
    model = train(X, y, params=ForestParams(n_trees=10, seed=2))
    imp = feature_importance(model)
    assert imp.sum() == pytest.approx(1.0)
    assert imp[0] >= 0.9
    assert imp[20] == 0.0
    groups = grouped_importance(model)
    assert sum(groups.values()) == pytest.approx(1.0)
    assert groups["linearity"] == pytest.approx(imp[0])


def test_depth_and_leaf_size_limits():
    rng = np.random.default_rng(10)
    X = rng.normal(0, 1, (120, 44))
    y = rng.integers(1, 7, 120)
    model = train(X, y, params=ForestParams(n_trees=5, max_depth=4,
                                            min_samples_leaf=5, seed=3))
    for tree in model.trees:
        assert tree.depth() <= 4
        leaves = tree.feature < 0
        assert (tree.value[leaves].sum(axis=1) >= 5).all()


def test_argmax_invariant_under_monotone_rescaling():
    rng = np.random.default_rng(12)
    for trial in range(10):
        n = int(rng.integers(20, 60))
        # coarse grid keeps distinct values distinct after the transform
        # (cube gaps stay far above float rounding)
        X = np.round(rng.normal(0, 1, (n, 44)), 3)
        y = rng.integers(1, 7, n)
        scale = rng.uniform(0.5, 3.0, 44)
        shift = rng.normal(0, 2, 44)
        Xm = np.sign(X) * np.abs(X) ** 3 * scale + shift  # strictly monotone
        probes = np.round(rng.normal(0, 1.5, (15, 44)), 3)
        probes_m = np.sign(probes) * np.abs(probes) ** 3 * scale + shift
        params = ForestParams(n_trees=6, seed=trial)
        ma = train(X, y, params=params)
        mb = train(Xm, y, params=params)
        assert np.array_equal(ma.predict_labels(X), mb.predict_labels(Xm))
        assert np.array_equal(ma.predict_labels(probes),
                              mb.predict_labels(probes_m))


def test_weighted_bootstrap_dominates():
    X = pad44(np.zeros((20, 1)))
    y = np.array([1] * 10 + [2] * 10)
    w = np.array([1.0] * 10 + [100.0] * 10)
    model = train(X, y, w=w, params=ForestParams(n_trees=30, seed=0))
    cls, probs = model.predict(np.zeros(44))
    assert cls == 2
    assert probs[1] > 0.8


def test_serialization_round_trip():
    rng = np.random.default_rng(14)
    X, y = two_clusters(rng, n=30)
    model = train(X, y, params=ForestParams(n_trees=6, seed=5))
    blob = model_to_bytes(model)
    back = model_from_bytes(blob)
    q = rng.normal(3, 4, (15, 44))
    assert np.array_equal(model.predict_proba(q), back.predict_proba(q))
    assert back.params == model.params
    assert np.array_equal(back.importances, model.importances)


def test_serialization_rejects_garbage():
    with pytest.raises(ValueError, match="magic"):
        model_from_bytes(b"not a model at all")


def test_model_file_round_trip(tmp_path):
    rng = np.random.default_rng(15)
    X, y = two_clusters(rng, n=25)
    model = train(X, y, params=ForestParams(n_trees=4, seed=9))
    path = str(tmp_path / "model.rf")
    save_model(model, path)
    back = load_model(path)
    assert np.array_equal(model.predict_proba(X), back.predict_proba(X))
