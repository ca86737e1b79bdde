"""Column filtering, winsorization, mean imputation and scaling.

Every statistic is fitted on the training rows handed to :meth:`PreprocessRecipe.fit`
and then frozen; transforming test rows never looks at them.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np


class NonFiniteFeatureError(ValueError):
    pass


@dataclass(frozen=True)
class PreprocessRecipe:
    """Unfitted preprocessing choices.

    missing_threshold : drop a column when its training missing share exceeds this
    variance_threshold : drop a column when its (winsorized) training variance is under this
    winsor_limit : clamp at the training quantiles [limit, 1 - limit]
    impute_standardize : mean-impute then scale to unit variance (off for boosting)
    """
    missing_threshold: float = 1.0
    variance_threshold: float = 0.0
    winsor_limit: float = 0.0
    impute_standardize: bool = True

    def fit(self, X, names=None) -> "FittedRecipe":
        X = np.asarray(X, dtype=float)
        n, p = X.shape
        names = list(names) if names is not None else [f"x{j}" for j in range(p)]
        _check_finite(X, names)
        miss = np.isnan(X)
        keep = miss.mean(axis=0) <= self.missing_threshold if n else np.ones(p, bool)
        keep &= ~miss.all(axis=0)
        Xk = X[:, keep]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            if self.winsor_limit > 0:
                lo, hi = column_quantiles(Xk, (self.winsor_limit, 1 - self.winsor_limit))
            else:
                lo = np.full(Xk.shape[1], -np.inf)
                hi = np.full(Xk.shape[1], np.inf)
            Xw = np.clip(Xk, lo, hi)
            var = np.nanvar(Xw, axis=0)
        ok = var >= self.variance_threshold
        idx = np.flatnonzero(keep)[ok]
        lo, hi, Xw = lo[ok], hi[ok], Xw[:, ok]
        if self.impute_standardize:
            mean = np.nanmean(Xw, axis=0)
            filled = np.where(np.isnan(Xw), mean, Xw)
            sd = filled.std(axis=0)
            sd[sd == 0] = 1.0
        else:
            mean = np.zeros(len(idx))
            sd = np.ones(len(idx))
        return FittedRecipe(self, idx, [names[j] for j in idx], lo, hi, mean, sd)


@dataclass
class FittedRecipe:
    recipe: PreprocessRecipe
    columns: np.ndarray
    names: list
    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    sd: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)[:, self.columns]
        _check_finite(X, self.names)
        X = np.clip(X, self.lo, self.hi)
        if self.recipe.impute_standardize:
            X = np.where(np.isnan(X), self.mean, X)
            X = (X - self.mean) / self.sd
            _check_finite(X, self.names, allow_nan=False)
        return X

    def to_dict(self) -> dict:
        return {
            "recipe": asdict(self.recipe),
            "columns": self.columns.tolist(),
            "names": self.names,
            "lo": _enc(self.lo), "hi": _enc(self.hi),
            "mean": self.mean.tolist(), "sd": self.sd.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedRecipe":
        return cls(PreprocessRecipe(**d["recipe"]), np.asarray(d["columns"], dtype=np.int64),
                   list(d["names"]), _dec(d["lo"]), _dec(d["hi"]),
                   np.asarray(d["mean"], dtype=float), np.asarray(d["sd"], dtype=float))


def column_quantiles(X, qs):
    """Per-column quantiles ignoring NaN; numpy's default linear rule, one sort for all columns.

    Same values as ``np.nanquantile(X, q, axis=0)`` bit for bit, which loops over columns.
    """
    S = np.sort(X, axis=0)  # NaN sorts last
    m = (~np.isnan(X)).sum(axis=0)
    cols = np.arange(X.shape[1])
    out = []
    for q in qs:
        pos = q * (m - 1).clip(min=0)
        i = np.floor(pos).astype(np.int64)
        j = np.minimum(i + 1, (m - 1).clip(min=0))
        t = pos - i
        a, b = S[i, cols], S[j, cols]
        d = b - a
        v = np.where(t >= 0.5, b - d * (1 - t), a + d * t)
        v = np.where(i == j, a, v)
        out.append(np.where(m > 0, v, np.nan))
    return out


def _check_finite(X, names, allow_nan=True):
    bad = np.isinf(X) if allow_nan else ~np.isfinite(X)
    if bad.any():
        j = int(np.flatnonzero(bad.any(axis=0))[0])
        raise NonFiniteFeatureError(f"non-finite value in feature {names[j]!r}")


# json has no infinities; unbounded winsor limits travel as strings
def _enc(a):
    return [repr(float(v)) if np.isinf(v) else float(v) for v in a]


def _dec(a):
    return np.asarray([float(v) for v in a], dtype=float)
