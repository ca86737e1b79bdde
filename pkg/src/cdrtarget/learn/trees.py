"""Tree ensembles: histogram gradient boosting and a bagged exact-split forest.

Trees are stored as flat node arrays (feature, threshold, default_left, left,
right, value, gain, count); a node with ``left == -1`` is a leaf. A row goes
left when ``x <= threshold``, and a missing ``x`` follows ``default_left``.
Split ties go to the lowest feature index, then the lowest threshold.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from ._kernels import best_split, cart_split, histograms, predict_tree, split_node

MAX_BIN = 255
MIN_DATA_IN_BIN = 3


@dataclass
class Tree:
    feature: np.ndarray
    threshold: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray
    count: np.ndarray

    def predict(self, X) -> np.ndarray:
        return predict_tree(np.ascontiguousarray(X, dtype=float), self.feature, self.threshold,
                            self.default_left, self.left, self.right, self.value)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in _TREE_FIELDS}

    @classmethod
    def from_dict(cls, d) -> "Tree":
        return cls(**{k: np.asarray(d[k], dtype=dt) for k, dt in _TREE_FIELDS.items()})


_TREE_FIELDS = {"feature": np.int64, "threshold": float, "default_left": np.bool_,
                "left": np.int64, "right": np.int64, "value": float, "gain": float,
                "count": np.int64}


class _Builder:
    def __init__(self):
        self.nodes = []

    def add(self, value, count):
        self.nodes.append([0, 0.0, True, -1, -1, float(value), 0.0, int(count)])
        return len(self.nodes) - 1

    def split(self, node, feature, threshold, default_left, gain, lv, ln, rv, rn):
        nd = self.nodes[node]
        nd[0], nd[1], nd[2], nd[6] = int(feature), float(threshold), bool(default_left), float(gain)
        nd[3] = self.add(lv, ln)
        nd[4] = self.add(rv, rn)
        return nd[3], nd[4]

    def tree(self) -> Tree:
        cols = list(zip(*self.nodes))
        return Tree(*(np.asarray(c, dtype=dt) for c, dt in zip(cols, _TREE_FIELDS.values())))


# ------------------------------------------------------------------ binning

@dataclass
class BinMapper:
    """Per-feature upper bin edges; bin ``n_bins - 1`` is the missing bin."""
    edges: list
    n_bins: int

    @classmethod
    def fit(cls, X, max_bin=MAX_BIN, min_data_in_bin=MIN_DATA_IN_BIN):
        """Equal-frequency upper edges, snapped to observed values; a feature
        with few distinct values gets one bin per value."""
        edges = []
        for j in range(X.shape[1]):
            v = np.sort(X[:, j])
            v = v[: len(v) - int(np.isnan(v).sum())]
            u = np.unique(v)
            k = max(1, min(max_bin, len(v) // max(1, min_data_in_bin)))
            if len(u) > k:
                pos = (np.arange(1, k + 1) * len(v)) // k - 1
                u = np.unique(v[pos])
            edges.append(u)
        n_bins = max((len(e) for e in edges), default=0) + 1
        return cls(edges, n_bins)

    def transform(self, X) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.uint8 if self.n_bins <= 256 else np.uint16, order="F")
        for j, e in enumerate(self.edges):
            col = X[:, j]
            b = np.searchsorted(e, col, side="left")
            b[np.isnan(col)] = self.n_bins - 1
            out[:, j] = b
        return np.asfortranarray(out)


# ------------------------------------------------------------ boosting

def logistic_gradient(p, y):
    """First and second derivative of the log loss with respect to the raw score."""
    return p - y, p * (1 - p)


def _leaf_value(G, H, reg_lambda):
    return -G / (H + reg_lambda) if H + reg_lambda > 0 else 0.0


def grow_leafwise(binned, mapper: BinMapper, grad, hess, rows, num_leaves, min_data, max_depth=-1,
                  min_hess=1e-3, reg_lambda=0.0) -> Tree:
    """Best-first growth until ``num_leaves`` leaves or no positive-gain split."""
    n_valid = np.array([len(e) for e in mapper.edges], dtype=np.int64)
    b = _Builder()
    G, H = float(grad[rows].sum()), float(hess[rows].sum())
    root = b.add(_leaf_value(G, H, reg_lambda), len(rows))
    pending = {root: (rows, histograms(binned, rows, grad, hess, mapper.n_bins), 0)}
    heap = []

    def consider(node):
        r, hist, depth = pending[node]
        if (max_depth > 0 and depth >= max_depth) or len(r) < 2 * min_data:
            return
        s = best_split(hist, n_valid, float(min_data), min_hess, reg_lambda)
        if s[1] >= 0 and s[0] > 0:
            # order: gain desc, then creation order (deterministic)
            heapq.heappush(heap, (-s[0], node, s))

    consider(root)
    n_leaves = 1
    while heap and n_leaves < num_leaves:
        _, node, (gain, f, bin_, dl) = heapq.heappop(heap)
        r, hist, depth = pending.pop(node)
        lr, rr, lh, rh = split_node(binned, r, f, bin_, dl, grad, hess, hist, mapper.n_bins)
        lv = _leaf_value(lh[0, :, 0].sum(), lh[0, :, 1].sum(), reg_lambda)
        rv = _leaf_value(rh[0, :, 0].sum(), rh[0, :, 1].sum(), reg_lambda)
        thr = mapper.edges[f][bin_]
        li, ri = b.split(node, f, thr, dl, gain, lv, len(lr), rv, len(rr))
        pending[li] = (lr, lh, depth + 1)
        pending[ri] = (rr, rh, depth + 1)
        consider(li)
        consider(ri)
        n_leaves += 1
    return b.tree()


def fit_gbm(X, y, w=None, task="classification", n_trees=100, learning_rate=0.05,
            num_leaves=10, min_data_in_leaf=10, max_depth=-1, max_bin=MAX_BIN):
    """Gradient boosting with logistic (classification) or squared (regression) loss.

    A tree whose full step would raise the weighted training loss is shrunk by
    halving until it does not, so the training loss never increases.
    """
    X = np.ascontiguousarray(X, dtype=float)  # once, not per tree
    y = np.asarray(y, dtype=float)
    n = len(y)
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    w = w * (n / w.sum())
    mapper = BinMapper.fit(X, max_bin)
    binned = mapper.transform(X)
    rows = np.arange(n, dtype=np.int64)
    if task == "classification":
        m = float(np.clip(np.sum(w * y) / n, 1e-12, 1 - 1e-12))
        init = math.log(m / (1 - m))
    else:
        init = float(np.sum(w * y) / n)
    F = np.full(n, init)
    loss = _loss(task, y, F, w)
    trees, scales, losses = [], [], [loss]
    for _ in range(n_trees):
        if task == "classification":
            g, h = logistic_gradient(_sigmoid(F), y)
        else:
            g, h = F - y, np.ones(n)
        tree = grow_leafwise(binned, mapper, w * g, w * h, rows, num_leaves, min_data_in_leaf,
                             max_depth)
        step = tree.predict(X)
        scale = learning_rate
        while True:
            new = _loss(task, y, F + scale * step, w)
            if new <= loss or scale < learning_rate * 2.0 ** -30:
                break
            scale *= 0.5
        if new > loss:
            scale, new = 0.0, loss
        F = F + scale * step
        loss = new
        trees.append(tree)
        scales.append(scale)
        losses.append(loss)
    return {"init": init, "trees": trees, "scales": scales, "train_loss": losses}


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _loss(task, y, F, w):
    if task == "classification":
        return float(np.sum(w * (np.logaddexp(0.0, F) - y * F)) / len(y))
    return float(np.sum(w * (y - F) ** 2) / (2 * len(y)))


def gbm_raw(params, X):
    X = np.ascontiguousarray(X, dtype=float)
    F = np.full(len(X), params["init"])
    for t, s in zip(params["trees"], params["scales"]):
        if s:
            F += s * t.predict(X)
    return F


# ------------------------------------------------------------ random forest

def _cart(X, y, w, rows, rng, task, max_depth, max_features, min_leaf=1) -> Tree:
    """Exact-split CART on (already imputed) X: gini or variance impurity,
    ``max_features`` candidate features drawn fresh at every node."""
    b = _Builder()
    p = X.shape[1]
    clf = task == "classification"

    def leaf_val(r):
        ww = w[r]
        return float(np.dot(ww, y[r]) / ww.sum())

    root = b.add(leaf_val(rows), len(rows))
    stack = [(root, rows, 0)]
    while stack:
        node, r, depth = stack.pop()
        if depth >= max_depth or len(r) < 2 * min_leaf:
            continue
        yy = y[r]
        if np.all(yy == yy[0]):
            continue
        feats = np.sort(rng.choice(p, size=min(max_features, p), replace=False))
        gain, f, thr, _ = cart_split(X, y, w, r, feats, clf, min_leaf)
        if f < 0:
            continue
        go = X[r, f] <= thr
        lr, rr = r[go], r[~go]
        li, ri = b.split(node, f, thr, True, gain, leaf_val(lr), len(lr), leaf_val(rr), len(rr))
        stack.append((ri, rr, depth + 1))
        stack.append((li, lr, depth + 1))
    return b.tree()


def fit_forest(X, y, w=None, task="classification", n_trees=100, max_depth=8, seed=0,
               min_samples_leaf=1):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    max_features = max(1, int(math.sqrt(p)) if task == "classification" else p // 3)
    trees = []
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        rows = np.sort(rng.integers(0, n, size=n))
        trees.append(_cart(X, y, w, rows, rng, task, max_depth, max_features, min_samples_leaf))
    return {"trees": trees}


def forest_predict(params, X):
    X = np.ascontiguousarray(X, dtype=float)
    return np.mean([t.predict(X) for t in params["trees"]], axis=0)


def impurity_importance(trees, n_features) -> np.ndarray:
    """Total split gain per feature, normalised to sum to one."""
    imp = np.zeros(n_features)
    for t in trees:
        inner = t.left >= 0
        np.add.at(imp, t.feature[inner], t.gain[inner])
    s = imp.sum()
    return imp / s if s > 0 else imp
