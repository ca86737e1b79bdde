"""Linear and logistic regression, plain and L1-penalised.

Weights are normalised to sum to one, so penalties act on the weighted mean loss:

    logistic      sum_i w_i l_i
    logistic_l1   sum_i w_i l_i + alpha * |beta|_1
    linear        sum_i w_i r_i^2 / 2
    lasso         sum_i w_i r_i^2 / 2 + alpha * |beta|_1

The intercept is never penalised.
"""

from __future__ import annotations

import logging

import numpy as np

from ._kernels import cd_weighted_lasso

log = logging.getLogger(__name__)

GRAD_TOL = 1e-8


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def log_loss(y, eta, w):
    """Weighted mean logistic loss on the linear-predictor scale (overflow safe)."""
    return float(np.sum(w * (np.logaddexp(0.0, eta) - y * eta)))


def _norm_weights(w, n):
    w = np.ones(n) if w is None else np.asarray(w, dtype=float)
    return w / w.sum()


def fit_logistic(X, y, w=None, max_iter=200, tol=GRAD_TOL):
    """Newton-Raphson (IRLS) with step halving; stops at gradient norm < tol.

    Under complete separation the maximum-likelihood estimate does not exist;
    iterations then run until the gradient vanishes numerically or max_iter.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _norm_weights(w, n)
    A = np.hstack([np.ones((n, 1)), X])
    m = float(np.clip(np.sum(w * y), 1e-12, 1 - 1e-12))
    beta = np.zeros(p + 1)
    beta[0] = np.log(m / (1 - m))
    eta = A @ beta
    f = log_loss(y, eta, w)
    it = 0
    for it in range(1, max_iter + 1):
        mu = sigmoid(eta)
        g = A.T @ (w * (mu - y))
        if np.linalg.norm(g) < tol:
            break
        v = w * mu * (1 - mu)
        H = (A * v[:, None]).T @ A
        H[np.diag_indices_from(H)] += 1e-12 * max(1.0, float(np.trace(H)))
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        t = 1.0
        while True:
            cand = beta - t * step
            eta_c = A @ cand
            f_c = log_loss(y, eta_c, w)
            if f_c <= f or t < 1e-10:
                break
            t *= 0.5
        if f_c > f:
            break
        beta, eta, f = cand, eta_c, f_c
    else:
        log.debug("logistic: max_iter reached (|grad| %.2e)", np.linalg.norm(g))
    return {"intercept": float(beta[0]), "coef": beta[1:], "n_iter": it}


def _l1_objective(y, eta, w, beta, alpha):
    return log_loss(y, eta, w) + alpha * float(np.abs(beta).sum())


def fit_logistic_l1(X, y, w=None, alpha=1.0, max_iter=100, tol=GRAD_TOL):
    """Proximal Newton: each outer step solves the penalised weighted least
    squares approximation by coordinate descent with soft thresholding."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _norm_weights(w, n)
    m = float(np.clip(np.sum(w * y), 1e-12, 1 - 1e-12))
    b0 = np.log(m / (1 - m))
    beta = np.zeros(p)
    eta = b0 + X @ beta
    f = _l1_objective(y, eta, w, beta, alpha)
    it = 0
    for it in range(1, max_iter + 1):
        mu = sigmoid(eta)
        v = np.maximum(mu * (1 - mu), 1e-10)
        z = eta + (y - mu) / v
        nb = beta.copy()
        nb0, _ = cd_weighted_lasso(X, z, w * v, alpha, nb, b0, tol * 1e-2, 10000)
        d0, d = nb0 - b0, nb - beta
        t = 1.0
        while True:
            cb0, cb = b0 + t * d0, beta + t * d
            eta_c = cb0 + X @ cb
            f_c = _l1_objective(y, eta_c, w, cb, alpha)
            if f_c <= f + 1e-15 or t < 1e-10:
                break
            t *= 0.5
        delta = t * max(abs(d0), float(np.abs(d).max()) if p else 0.0)
        if f_c > f + 1e-15:
            break
        b0, beta, eta, f = cb0, cb, eta_c, f_c
        if delta < tol:
            break
    return {"intercept": float(b0), "coef": beta, "n_iter": it}


def fit_linear(X, y, w=None):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _norm_weights(w, n)
    A = np.hstack([np.ones((n, 1)), X]) * np.sqrt(w)[:, None]
    beta = np.linalg.lstsq(A, y * np.sqrt(w), rcond=None)[0]
    return {"intercept": float(beta[0]), "coef": beta[1:], "n_iter": 1}


def fit_lasso(X, y, w=None, alpha=1.0, tol=1e-10, max_sweeps=100000):
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    w = _norm_weights(w, n)
    beta = np.zeros(p)
    b0, sweeps = cd_weighted_lasso(X, y, w, alpha, beta, float(np.sum(w * y)), tol, max_sweeps)
    return {"intercept": float(b0), "coef": beta, "n_iter": int(sweeps)}


def linear_predictor(params, X):
    return params["intercept"] + np.asarray(X, dtype=float) @ np.asarray(params["coef"])
