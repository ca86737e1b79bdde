"""Survey wellbeing measures: asset index, log consumption, ultra-poor rule."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data_model import Household


class IllConditionedError(ValueError):
    pass


@dataclass(frozen=True)
class AssetIndexModel:
    means: np.ndarray
    sds: np.ndarray
    loadings: np.ndarray
    explained_variance_ratio: float
    sign: int
    dropped: tuple = ()

    def to_json(self) -> str:
        return json.dumps({
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "loadings": self.loadings.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio,
            "sign": self.sign,
            "dropped": list(self.dropped),
        })

    @classmethod
    def from_json(cls, text: str) -> "AssetIndexModel":
        d = json.loads(text)
        return cls(np.array(d["means"]), np.array(d["sds"]), np.array(d["loadings"]),
                   d["explained_variance_ratio"], d["sign"], tuple(d["dropped"]))

    def score(self, assets) -> np.ndarray:
        """Index for a matrix (n, n_assets) or a single row of assets."""
        a = np.asarray(assets, dtype=float)
        z = (a - self.means) / np.where(self.sds > 0, self.sds, 1.0)
        return z @ self.loadings


def leading_eigenvector(c: np.ndarray, tol: float = 1e-10, max_iter: int = 10_000):
    """Top eigenpair of a symmetric PSD matrix by power iteration.

    Iteration is seeded with a few rounds of repeated squaring, which raises the
    effective power to 2**k and makes small eigen-gaps converge quickly.
    """
    p = c.shape[0]
    m = c / max(np.abs(c).max(), 1e-300)
    for _ in range(40):
        m = m @ m
        m /= max(np.abs(m).max(), 1e-300)
    # the column of largest norm of C**(2**k) points along the top eigenvector
    v = m[:, np.argmax(np.einsum("ij,ij->j", m, m))].copy()
    if not np.any(v):
        v = np.ones(p)
    v /= np.linalg.norm(v)
    for _ in range(max_iter):
        w = c @ v
        w /= np.linalg.norm(w)
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            v = w
            break
        v = w
    else:
        warnings.warn("power iteration did not reach tolerance", RuntimeWarning)
    return float(v @ c @ v), v


def fit_asset_index(assets) -> AssetIndexModel:
    """First principal component of standardized asset holdings.

    Parameters
    ----------
    assets : array (n_households, n_assets), complete rows only

    Zero-variance assets are dropped with a warning and get loading 0. Loadings
    are oriented so they sum to a non-negative number.
    """
    x = np.asarray(assets, dtype=float)
    if x.ndim != 2:
        raise ValueError("assets must be a 2-D array")
    n, p = x.shape
    if np.isnan(x).any():
        raise ValueError("asset matrix contains missing values; pass complete rows only")
    if n <= p:
        raise IllConditionedError(f"{n} households cannot identify {p} asset loadings")
    means = x.mean(axis=0)
    sds = x.std(axis=0, ddof=1)
    keep = sds > 0
    dropped = tuple(int(j) for j in np.flatnonzero(~keep))
    if dropped:
        warnings.warn(f"dropping zero-variance assets {dropped}", RuntimeWarning)
    if not keep.any():
        raise IllConditionedError("every asset is constant")
    z = (x[:, keep] - means[keep]) / sds[keep]
    corr = (z.T @ z) / (n - 1)
    eigval, vec = leading_eigenvector(corr)
    loadings = np.zeros(p)
    loadings[keep] = vec
    sign = 1
    if loadings.sum() < 0:
        loadings = -loadings
        sign = -1
    evr = eigval / np.trace(corr)
    return AssetIndexModel(means, sds, loadings, float(min(evr, 1.0)), sign, dropped)


def score_assets(model: AssetIndexModel, household: Household) -> float:
    """Wealth index of one household; NaN when its assets are incomplete."""
    if household.assets is None:
        return math.nan
    return float(model.score(household.assets))


def log_consumption(household: Household) -> float:
    c = household.consumption_pc_monthly
    if c is None or not c > 0:
        return math.nan
    return math.log(c)


def ultra_poor_rule(cwr: bool, criteria: Sequence[bool]) -> bool:
    """Extreme-poor in the community ranking and at least 3 of the 6 criteria."""
    return bool(cwr) and sum(bool(c) for c in criteria) >= 3


def asset_matrix(households: Sequence[Household]) -> np.ndarray:
    """(n, 16) asset matrix with NaN rows for incomplete households."""
    out = np.full((len(households), 16), np.nan)
    for i, h in enumerate(households):
        if h.assets is not None:
            out[i] = h.assets
    return out
