import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdrtarget.learn._kernels import cart_split
from cdrtarget.learn.trees import (BinMapper, Tree, fit_forest, fit_gbm, forest_predict, gbm_raw,
                                   impurity_importance, logistic_gradient)


def _logloss(F, y):
    return np.logaddexp(0.0, F) - y * F


def test_gradient_matches_numerical_derivative():
    rng = np.random.default_rng(0)
    F = rng.uniform(-6, 6, 10_000)
    y = rng.integers(0, 2, 10_000).astype(float)
    h = 1e-5
    num = (_logloss(F + h, y) - _logloss(F - h, y)) / (2 * h)
    g, hess = logistic_gradient(1 / (1 + np.exp(-F)), y)
    np.testing.assert_allclose(g, num, atol=1e-6)
    num2 = (_logloss(F + h, y) - 2 * _logloss(F, y) + _logloss(F - h, y)) / h ** 2
    np.testing.assert_allclose(hess, num2, atol=1e-4)


def _hand_best_split(x, y):
    """Every threshold between distinct values; XGBoost-style gain at the first step."""
    p0 = y.mean()
    g, h = p0 - y, np.full(len(y), p0 * (1 - p0))
    best = (-np.inf, None)
    for t in np.unique(x)[:-1]:
        L = x <= t
        gain = g[L].sum() ** 2 / h[L].sum() + g[~L].sum() ** 2 / h[~L].sum() - g.sum() ** 2 / h.sum()
        if gain > best[0] + 1e-12:
            best = (gain, t)
    return best


def test_single_stump_recovers_threshold():
    rng = np.random.default_rng(1)
    vals = np.repeat(np.arange(10, dtype=float), 3)
    x = rng.permutation(vals)
    noise = rng.permutation(vals)
    y = (x > 6).astype(float)
    fit = fit_gbm(np.column_stack([noise, x]), y, n_trees=1, learning_rate=1.0, num_leaves=2,
                  min_data_in_leaf=1)
    t = fit["trees"][0]
    gain, thr = _hand_best_split(x, y)
    assert t.feature[0] == 1 and t.threshold[0] == thr == 6.0
    assert t.gain[0] == pytest.approx(gain, rel=1e-9)


def test_tie_goes_to_lowest_feature():
    x = np.repeat(np.arange(8, dtype=float), 3)
    y = (x > 3).astype(float)
    fit = fit_gbm(np.column_stack([x, x, x]), y, n_trees=1, num_leaves=2, min_data_in_leaf=1)
    assert fit["trees"][0].feature[0] == 0


def test_missing_direction_is_learned():
    rng = np.random.default_rng(2)
    x = rng.normal(size=400)
    y = (x > 0.5).astype(float)
    x[:60] = np.nan
    y[:60] = 1.0
    fit = fit_gbm(x[:, None], y, n_trees=30, learning_rate=0.3, num_leaves=4, min_data_in_leaf=5)
    t = fit["trees"][0]
    # the missing rows are positives, so they must join the high-x side
    assert t.threshold[0] == pytest.approx(0.5, abs=0.1) and not t.default_left[0]
    p = 1 / (1 + np.exp(-gbm_raw(fit, np.array([[np.nan], [-1.0]]))))
    assert p[0] > 0.8 > 0.2 > p[1]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.sampled_from(["classification", "regression"]))
def test_training_loss_never_increases(seed, task):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(20, 120)), int(rng.integers(1, 6))
    X = rng.standard_normal((n, p))
    X[rng.random((n, p)) < 0.1] = np.nan
    y = (rng.random(n) < 0.4).astype(float) if task == "classification" else rng.normal(size=n)
    w = rng.uniform(0.2, 5.0, n)
    fit = fit_gbm(X, y, w, task, n_trees=15, learning_rate=float(rng.choice([0.05, 0.075, 1.5])),
                  num_leaves=int(rng.choice([2, 5, 10])), min_data_in_leaf=int(rng.choice([1, 5])))
    losses = np.array(fit["train_loss"])
    assert np.all(np.diff(losses) <= 0)


def test_bins_small_cardinality_and_missing_bin():
    X = np.array([[1.0], [2.0], [2.0], [np.nan], [5.0], [1.0]])
    m = BinMapper.fit(X, min_data_in_bin=1)
    np.testing.assert_array_equal(m.edges[0], [1.0, 2.0, 5.0])
    np.testing.assert_array_equal(m.transform(X)[:, 0], [0, 1, 1, m.n_bins - 1, 2, 0])
    many = BinMapper.fit(np.arange(1000.0)[:, None])
    assert len(many.edges[0]) == 255
    X3 = np.arange(30.0)[:, None]
    assert len(BinMapper.fit(X3, min_data_in_bin=3).edges[0]) == 10


def _brute_gini(X, y, rows, feats, min_leaf=1):
    best = (1e-12, -1, 0.0)
    yy = y[rows]
    W = len(rows)
    base = (yy.sum() ** 2 + (W - yy.sum()) ** 2) / W
    for f in feats:
        xs = np.unique(X[rows, f])
        for a, b in zip(xs[:-1], xs[1:]):
            L = X[rows, f] <= a
            if L.sum() < min_leaf or (~L).sum() < min_leaf:
                continue
            s = 0.0
            for part in (yy[L], yy[~L]):
                s += (part.sum() ** 2 + (len(part) - part.sum()) ** 2) / len(part)
            if s - base > best[0]:
                best = (s - base, f, 0.5 * (a + b))
    return best


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_cart_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, p = int(rng.integers(4, 40)), int(rng.integers(1, 5))
    X = np.round(rng.normal(size=(n, p)), 1)
    y = (rng.random(n) < 0.5).astype(float)
    rows = np.arange(n, dtype=np.int64)
    feats = np.arange(p, dtype=np.int64)
    gain, f, thr, _ = cart_split(X, y, np.ones(n), rows, feats, True, 1)
    bg, bf, bt = _brute_gini(X, y, rows, feats)
    assert f == bf
    if f >= 0:
        assert gain == pytest.approx(bg, rel=1e-9) and thr == bt


def test_forest_determinism_and_range():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(150, 9))
    y = (X[:, 0] + 0.5 * rng.normal(size=150) > 0).astype(float)
    a = fit_forest(X, y, n_trees=10, max_depth=4, seed=5)
    b = fit_forest(X, y, n_trees=10, max_depth=4, seed=5)
    pa = forest_predict(a, X)
    np.testing.assert_array_equal(pa, forest_predict(b, X))
    assert pa.min() >= 0 and pa.max() <= 1
    assert ((pa > 0.5) == y).mean() > 0.85
    imp = impurity_importance(a["trees"], 9)
    assert imp.argmax() == 0 and imp.sum() == pytest.approx(1.0)
    depth1 = fit_forest(X, y, n_trees=3, max_depth=1, seed=0)
    assert all(len(t.feature) <= 3 for t in depth1["trees"])


def test_regression_forest_fits_signal():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(200, 6))
    y = 2 * X[:, 1] + 0.1 * rng.normal(size=200)
    fit = fit_forest(X, y, task="regression", n_trees=20, max_depth=6, seed=0)
    r = y - forest_predict(fit, X)
    assert 1 - r.var() / y.var() > 0.8


def test_tree_dict_roundtrip():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(100, 3))
    X[::7, 1] = np.nan
    y = (np.nan_to_num(X[:, 1]) > 0).astype(float)
    fit = fit_gbm(X, y, n_trees=5, num_leaves=5, min_data_in_leaf=5)
    for t in fit["trees"]:
        t2 = Tree.from_dict(t.to_dict())
        np.testing.assert_array_equal(t.predict(X), t2.predict(X))


def test_single_class_labels_do_not_break_boosting():
    X = np.random.default_rng(6).normal(size=(30, 2))
    fit = fit_gbm(X, np.zeros(30), n_trees=20, learning_rate=3.0, num_leaves=5, min_data_in_leaf=1)
    assert np.all(np.diff(fit["train_loss"]) <= 0)
    assert np.all(1 / (1 + np.exp(-gbm_raw(fit, X))) < 1e-6)
