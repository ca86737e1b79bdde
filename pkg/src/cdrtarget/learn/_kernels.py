"""Compiled inner loops: coordinate descent and histogram accumulation."""

import numpy as np
from numba import njit


@njit(cache=True)
def soft_threshold(z, a):
    if z > a:
        return z - a
    if z < -a:
        return z + a
    return 0.0


@njit(cache=True)
def cd_weighted_lasso(X, z, w, alpha, beta, b0, tol, max_sweeps):
    """Minimise sum_i w_i (z_i - b0 - x_i.beta)^2 / 2 + alpha * |beta|_1.

    ``w`` is normalised by the caller. ``beta`` is updated in place; returns
    (b0, n_sweeps). Residuals are maintained incrementally.
    """
    n, p = X.shape
    r = np.empty(n)
    for i in range(n):
        s = b0
        for j in range(p):
            s += X[i, j] * beta[j]
        r[i] = z[i] - s
    sw = 0.0
    for i in range(n):
        sw += w[i]
    xsq = np.zeros(p)
    for j in range(p):
        acc = 0.0
        for i in range(n):
            acc += w[i] * X[i, j] * X[i, j]
        xsq[j] = acc
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        # intercept
        acc = 0.0
        for i in range(n):
            acc += w[i] * r[i]
        d0 = acc / sw
        if d0 != 0.0:
            b0 += d0
            for i in range(n):
                r[i] -= d0
            if abs(d0) > max_delta:
                max_delta = abs(d0)
        for j in range(p):
            if xsq[j] <= 0.0:
                continue
            acc = 0.0
            for i in range(n):
                acc += w[i] * X[i, j] * r[i]
            old = beta[j]
            new = soft_threshold(acc + xsq[j] * old, alpha) / xsq[j]
            d = new - old
            if d != 0.0:
                beta[j] = new
                for i in range(n):
                    r[i] -= X[i, j] * d
                if abs(d) > max_delta:
                    max_delta = abs(d)
        if max_delta < tol:
            break
    return b0, sweeps


@njit(cache=True)
def histograms(binned, rows, grad, hess, n_bins):
    """Per-feature, per-bin sums of gradient, hessian and row count.

    ``binned`` is column-major with bin ``n_bins - 1`` reserved for missing;
    looping feature-outer keeps one feature's histogram hot in cache.
    """
    p = binned.shape[1]
    m = rows.shape[0]
    out = np.zeros((p, n_bins, 3))
    g = np.empty(m)
    h = np.empty(m)
    for k in range(m):
        g[k] = grad[rows[k]]
        h[k] = hess[rows[k]]
    for j in range(p):
        col = binned[:, j]
        for k in range(m):
            b = col[rows[k]]
            out[j, b, 0] += g[k]
            out[j, b, 1] += h[k]
            out[j, b, 2] += 1.0
    return out


@njit(cache=True)
def split_node(binned, rows, f, bin_, default_left, grad, hess, hist, n_bins):
    """Partition a node's rows on (feature, bin) and build both child histograms:
    the smaller child directly, its sibling as parent minus child."""
    m = rows.shape[0]
    go = np.empty(m, dtype=np.bool_)
    nl = 0
    for k in range(m):
        c = binned[rows[k], f]
        go[k] = c <= bin_ or (default_left and c == n_bins - 1)
        if go[k]:
            nl += 1
    lr = np.empty(nl, dtype=rows.dtype)
    rr = np.empty(m - nl, dtype=rows.dtype)
    a = 0
    b = 0
    for k in range(m):
        if go[k]:
            lr[a] = rows[k]
            a += 1
        else:
            rr[b] = rows[k]
            b += 1
    if nl <= m - nl:
        lh = histograms(binned, lr, grad, hess, n_bins)
        rh = hist - lh
    else:
        rh = histograms(binned, rr, grad, hess, n_bins)
        lh = hist - rh
    return lr, rr, lh, rh


@njit(cache=True)
def predict_tree(X, feature, threshold, default_left, left, right, value):
    n = X.shape[0]
    out = np.empty(n)
    for i in range(n):
        node = 0
        while left[node] >= 0:
            x = X[i, feature[node]]
            if x != x:
                go_left = default_left[node]
            else:
                go_left = x <= threshold[node]
            node = left[node] if go_left else right[node]
        out[i] = value[node]
    return out


@njit(cache=True)
def best_split(hist, n_valid, min_data, min_hess, reg_lambda):
    """Scan every (feature, bin, missing side) candidate of a node histogram.

    Returns (gain, feature, bin, default_left); feature -1 when nothing beats 0.
    A candidate must beat the incumbent strictly, so ties keep the lowest
    feature, then the lowest bin, then missing-left.
    """
    p, nb, _ = hist.shape
    best_gain = 0.0
    best_f = -1
    best_b = -1
    best_dl = True
    if p == 0:
        return best_gain, best_f, best_b, best_dl
    G = 0.0
    H = 0.0
    C = 0.0
    for b in range(nb):
        G += hist[0, b, 0]
        H += hist[0, b, 1]
        C += hist[0, b, 2]
    if H < 2.0 * min_hess or H + reg_lambda <= 0.0:
        # no child could meet the hessian floor (e.g. saturated probabilities)
        return best_gain, best_f, best_b, best_dl
    parent = G * G / (H + reg_lambda)
    for f in range(p):
        mg = hist[f, nb - 1, 0]
        mh = hist[f, nb - 1, 1]
        mc = hist[f, nb - 1, 2]
        gl = 0.0
        hl = 0.0
        cl = 0.0
        for b in range(n_valid[f]):
            gl += hist[f, b, 0]
            hl += hist[f, b, 1]
            cl += hist[f, b, 2]
            # counts are monotone in b: prune bins no side could accept
            if cl + mc < min_data:
                continue
            if C - cl < min_data:
                break
            for side in range(2):
                if side == 0:
                    g1 = gl + mg
                    h1 = hl + mh
                    c1 = cl + mc
                else:
                    if mc == 0.0:
                        break
                    g1 = gl
                    h1 = hl
                    c1 = cl
                g2 = G - g1
                h2 = H - h1
                c2 = C - c1
                if c1 < min_data or c2 < min_data or h1 < min_hess or h2 < min_hess:
                    continue
                gain = g1 * g1 / (h1 + reg_lambda) + g2 * g2 / (h2 + reg_lambda) - parent
                if gain > best_gain + 1e-12 * max(1.0, abs(best_gain)):
                    best_gain = gain
                    best_f = f
                    best_b = b
                    best_dl = side == 0
    return best_gain, best_f, best_b, best_dl


@njit(cache=True)
def cart_split(X, y, w, rows, feats, classification, min_leaf):
    """Exact best split of ``rows`` over candidate columns ``feats``.

    Impurity decrease is measured as the weighted gini decrease (classification)
    or SSE decrease (regression), both through sum-of-squares terms. Returns
    (gain, feature, threshold, n_left); feature -1 when no split improves.
    Candidates are scanned in ascending feature then threshold order and must
    improve strictly.
    """
    m = rows.shape[0]
    W = 0.0
    WY = 0.0
    for k in range(m):
        W += w[rows[k]]
        WY += w[rows[k]] * y[rows[k]]
    if classification:
        base = (WY * WY + (W - WY) * (W - WY)) / W
    else:
        base = WY * WY / W
    best_gain = 1e-12 * max(1.0, base)
    best_f = -1
    best_thr = 0.0
    best_nl = 0
    xs = np.empty(m)
    for fi in range(feats.shape[0]):
        f = feats[fi]
        for k in range(m):
            xs[k] = X[rows[k], f]
        order = np.argsort(xs, kind="mergesort")
        wl = 0.0
        wyl = 0.0
        for k in range(m - 1):
            i = rows[order[k]]
            wl += w[i]
            wyl += w[i] * y[i]
            if k + 1 < min_leaf or m - k - 1 < min_leaf:
                continue
            a = xs[order[k]]
            b = xs[order[k + 1]]
            if not b > a:
                continue
            wr = W - wl
            wyr = WY - wyl
            if classification:
                score = ((wyl * wyl + (wl - wyl) * (wl - wyl)) / wl
                         + (wyr * wyr + (wr - wyr) * (wr - wyr)) / wr)
            else:
                score = wyl * wyl / wl + wyr * wyr / wr
            gain = score - base
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_thr = 0.5 * (a + b)
                best_nl = k + 1
    return best_gain, best_f, best_thr, best_nl
