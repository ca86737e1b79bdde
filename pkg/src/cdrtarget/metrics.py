"""Ranking and fit metrics shared by model selection and targeting evaluation."""

import numpy as np


class UndefinedAUCError(ValueError):
    pass


def weighted_auc(scores, labels, weights=None) -> float:
    """Weighted Mann-Whitney statistic: P(score_pos > score_neg), ties count 1/2.

    Runs in O(n log n) by sweeping tie groups in ascending score order.
    """
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels).astype(bool)
    w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float)
    wp_tot, wn_tot = float(w[y].sum()), float(w[~y].sum())
    if not (wp_tot > 0 and wn_tot > 0):
        raise UndefinedAUCError("AUC needs both classes present")
    order = np.argsort(s, kind="stable")
    s, y, w = s[order], y[order], w[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    wp = np.add.reduceat(np.where(y, w, 0.0), starts)
    wn = np.add.reduceat(np.where(y, 0.0, w), starts)
    below = np.cumsum(wn) - wn
    return float(np.sum(wp * (below + 0.5 * wn)) / (wp_tot * wn_tot))


def r2_score(y, pred, weights=None) -> float:
    y = np.asarray(y, dtype=float)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    m = np.sum(w * y) / w.sum()
    ss = np.sum(w * (y - m) ** 2)
    return float(1 - np.sum(w * (y - pred) ** 2) / ss) if ss > 0 else float("nan")
