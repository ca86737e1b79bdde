"""Stratified folds, nested cross-validation and the stacked combined method."""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..metrics import UndefinedAUCError, r2_score, weighted_auc
from .linear import fit_logistic, linear_predictor, sigmoid
from .models import ModelSpec, TrainedModel, fit_point

log = logging.getLogger(__name__)


class FoldError(ValueError):
    pass


class LeakageError(RuntimeError):
    """A stacked input was not produced strictly out of fold."""


@dataclass
class CvPredictions:
    """Pooled out-of-fold predictions.

    ``fold[i]`` is the fold whose held-out model predicted row ``i``;
    ``n_train[f]`` is the number of rows that model was trained on, which must
    equal the count of rows outside fold ``f``.
    """
    prediction: np.ndarray
    fold: np.ndarray
    seed: int
    n_train: list = field(default_factory=list)
    chosen: list = field(default_factory=list)
    inner_scores: list = field(default_factory=list)
    ids: list | None = None

    def check_out_of_fold(self, n_rows: int | None = None):
        fold = np.asarray(self.fold)
        if n_rows is not None and len(fold) != n_rows:
            raise LeakageError(f"predictions cover {len(fold)} rows, expected {n_rows}")
        if (fold < 0).any():
            raise LeakageError("some predictions were made in-sample (fold id < 0)")
        k = int(fold.max()) + 1 if len(fold) else 0
        if len(self.n_train) != k:
            raise LeakageError("fold bookkeeping does not match the fold assignment")
        for f in range(k):
            if self.n_train[f] != int((fold != f).sum()):
                raise LeakageError(f"fold {f} model was trained on rows it predicted")
        if not np.all(np.isfinite(self.prediction)):
            raise LeakageError("a row was never predicted")

    def auc(self, labels, weights=None) -> float:
        return weighted_auc(self.prediction, labels, weights)

    def fold_aucs(self, labels, weights=None) -> list:
        labels = np.asarray(labels)
        w = np.ones(len(labels)) if weights is None else np.asarray(weights, dtype=float)
        out = []
        for f in range(int(self.fold.max()) + 1):
            m = self.fold == f
            try:
                out.append(weighted_auc(self.prediction[m], labels[m], w[m]))
            except UndefinedAUCError:
                out.append(float("nan"))
        return out


def stratified_folds(labels, k: int, seed: int) -> np.ndarray:
    """Fold id per row. Each class is shuffled then dealt round-robin, the
    dealing continuing across classes so fold sizes also differ by at most 1."""
    y = np.asarray(labels)
    if k < 2:
        raise FoldError("need k >= 2 folds")
    classes, counts = np.unique(y, return_counts=True)
    if len(y) < k:
        raise FoldError(f"{len(y)} rows cannot fill {k} folds")
    if len(classes) > 1 and counts.min() < k:
        raise FoldError(f"class {classes[counts.argmin()].item()!r} has {counts.min()} members, "
                        f"fewer than k={k}")
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=np.int64)
    offset = 0
    for c in classes:
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = (offset + np.arange(len(idx))) % k
        offset = (offset + len(idx)) % k
    return fold


def plain_folds(n: int, k: int, seed: int) -> np.ndarray:
    if k < 2 or n < k:
        raise FoldError(f"cannot split {n} rows into {k} folds")
    rng = np.random.default_rng(seed)
    fold = np.empty(n, dtype=np.int64)
    fold[rng.permutation(n)] = np.arange(n) % k
    return fold


def _folds(spec, y, k, seed):
    return stratified_folds(y, k, seed) if spec.task == "classification" else plain_folds(len(y), k, seed)


def _score(spec, y, pred, w):
    if spec.task == "classification":
        return weighted_auc(pred, y, w)
    return r2_score(y, pred, w)


def _w(w, idx):
    return None if w is None else w[idx]


def select_point(spec: ModelSpec, X, y, w, inner_k: int, seed, names=None):
    """Grid search by mean inner-fold AUC (R^2 for regression); the first
    best grid point wins ties. Returns (point, index, scores)."""
    points = spec.points()
    if len(points) == 1:
        return points[0], 0, [float("nan")]
    inner = _folds(spec, y, inner_k, seed)
    scores = []
    for gi, point in enumerate(points):
        fold_scores = []
        try:
            for f in range(inner_k):
                tr, te = np.flatnonzero(inner != f), np.flatnonzero(inner == f)
                m = fit_point(spec, point, X[tr], y[tr], _w(w, tr), seed=_mix(seed, gi, f),
                              names=names)
                fold_scores.append(_score(spec, y[te], m.predict(X[te]), _w(w, te)))
            s = float(np.nanmean(fold_scores))
        except (ValueError, np.linalg.LinAlgError, FloatingPointError) as e:
            warnings.warn(f"{spec.family} grid point {point} failed: {e}", RuntimeWarning)
            s = float("nan")
        scores.append(s)
    ok = [i for i, s in enumerate(scores) if s == s]
    if not ok:
        raise RuntimeError(f"{spec.family}: every grid point failed to fit")
    best = max(ok, key=lambda i: (scores[i], -i))
    return points[best], best, scores


def _mix(seed, *path) -> int:
    return int(np.random.default_rng([int(seed), *map(int, path)]).integers(2 ** 31))


def _outer_task(args):
    spec, X, y, w, names, outer, f, inner_k, seed = args
    tr, te = np.flatnonzero(outer != f), np.flatnonzero(outer == f)
    point, gi, scores = select_point(spec, X[tr], y[tr], _w(w, tr), inner_k, _mix(seed, f, 1), names)
    model = fit_point(spec, point, X[tr], y[tr], _w(w, tr), seed=_mix(seed, f, 2), names=names,
                      fold_id=f)
    return te, model.predict(X[te]), point, scores, len(tr)


def nested_cv(spec: ModelSpec, X, y, weights=None, outer_k=10, inner_k=5, seed=0, names=None,
              workers=1, folds=None) -> CvPredictions:
    """Out-of-fold predictions with hyperparameters tuned inside each outer
    training split; preprocessing is refitted on every training split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    outer = _folds(spec, y, outer_k, seed) if folds is None else np.asarray(folds)
    k = int(outer.max()) + 1
    tasks = [(spec, X, y, w, names, outer, f, inner_k, seed) for f in range(k)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_outer_task, tasks))
    else:
        results = [_outer_task(t) for t in tasks]
    pred = np.full(len(y), np.nan)
    chosen, inner_scores, n_train = [], [], []
    for te, p, point, scores, ntr in results:  # fold order, independent of workers
        pred[te] = p
        chosen.append(point)
        inner_scores.append(scores)
        n_train.append(ntr)
    return CvPredictions(pred, outer, seed, n_train, chosen, inner_scores)


def refit_full(spec: ModelSpec, X, y, weights=None, inner_k=5, seed=0, names=None) -> TrainedModel:
    """Tune on the whole dataset and refit, for reporting hyperparameters and importances."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    point, _, _ = select_point(spec, X, y, w, inner_k, _mix(seed, 0, 1), names)
    return fit_point(spec, point, X, y, w, seed=_mix(seed, 0, 2), names=names)


@dataclass
class SplitPredictions:
    test_index: np.ndarray
    prediction: np.ndarray
    chosen: dict
    seed: int


def stratified_split(labels, test_fraction, seed):
    if not 0 < test_fraction < 1:
        raise FoldError("test_fraction must be in (0, 1)")
    y = np.asarray(labels)
    rng = np.random.default_rng(seed)
    test = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        idx = idx[rng.permutation(len(idx))]
        n_te = int(np.floor(test_fraction * len(idx) + 0.5))
        test.append(idx[:n_te])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(y)), test)
    return train, test


def single_split(spec: ModelSpec, X, y, weights=None, test_fraction=0.25, seed=0, inner_k=5,
                 names=None) -> SplitPredictions:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w = None if weights is None else np.asarray(weights, dtype=float)
    if spec.task == "classification":
        tr, te = stratified_split(y, test_fraction, seed)
    else:
        perm = np.random.default_rng(seed).permutation(len(y))
        n_te = int(np.floor(test_fraction * len(y) + 0.5))
        te, tr = np.sort(perm[:n_te]), np.sort(perm[n_te:])
    point, _, _ = select_point(spec, X[tr], y[tr], _w(w, tr), inner_k, _mix(seed, 0, 1), names)
    model = fit_point(spec, point, X[tr], y[tr], _w(w, tr), seed=_mix(seed, 0, 2), names=names)
    return SplitPredictions(te, model.predict(X[te]), point, seed)


COMBINED_FEATURES = ("assets", "consumption", "cdr")


def combined_method(asset_score, log_consumption, cdr, labels, weights=None, k=10, seed=0,
                    features=COMBINED_FEATURES) -> CvPredictions:
    """Logistic stacking of the asset index, log consumption and the CDR model's
    out-of-fold probability, pooled over k-fold CV.

    ``cdr`` must be a :class:`CvPredictions` (its out-of-fold bookkeeping is
    verified) unless "cdr" is not among ``features``.
    """
    y = np.asarray(labels, dtype=float)
    n = len(y)
    cols = []
    for name in features:
        if name == "assets":
            cols.append(np.asarray(asset_score, dtype=float))
        elif name == "consumption":
            cols.append(np.asarray(log_consumption, dtype=float))
        elif name == "cdr":
            if not isinstance(cdr, CvPredictions):
                raise LeakageError("CDR probabilities must come with their fold bookkeeping")
            cdr.check_out_of_fold(n)
            cols.append(np.asarray(cdr.prediction, dtype=float))
        else:
            raise ValueError(f"unknown combined feature {name!r}")
    Z = np.column_stack(cols)
    if not np.all(np.isfinite(Z)):
        raise ValueError("combined-method inputs must be finite for every household")
    w = None if weights is None else np.asarray(weights, dtype=float)
    fold = stratified_folds(y, k, seed)
    pred = np.full(n, np.nan)
    n_train = []
    for f in range(k):
        tr, te = np.flatnonzero(fold != f), np.flatnonzero(fold == f)
        mu, sd = Z[tr].mean(axis=0), Z[tr].std(axis=0)
        sd[sd == 0] = 1.0
        params = fit_logistic((Z[tr] - mu) / sd, y[tr], _w(w, tr))
        pred[te] = sigmoid(linear_predictor(params, (Z[te] - mu) / sd))
        n_train.append(len(tr))
    return CvPredictions(pred, fold, seed, n_train, [{"features": list(features)}] * k)
