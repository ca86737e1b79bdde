"""Model families, hyperparameter grids and the fitted-model container."""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field

import numpy as np

from . import linear, trees
from .preprocess import FittedRecipe, PreprocessRecipe

FORMAT_VERSION = "cdrtarget-model/1"

FAMILIES = ("logistic", "logistic_l1", "linear", "lasso", "random_forest", "gradient_boosting")
TASKS = {
    "logistic": ("classification",), "logistic_l1": ("classification",),
    "linear": ("regression",), "lasso": ("regression",),
    "random_forest": ("classification", "regression"),
    "gradient_boosting": ("classification", "regression"),
}
PREPROCESS_KEYS = ("missing_threshold", "variance_threshold", "winsor_limit")

_PRE = {
    "missing_threshold": [0.5, 0.8, 1.0],
    "variance_threshold": [0.0, 0.01, 0.1],
    "winsor_limit": [0.0, 0.01, 0.05],
}
_L1 = {"alpha": [1e-5, 1e-4, 1e-3, 1e-2, 0.1, 1.0, 10.0, 100.0]}
PUBLISHED_GRIDS = {
    "logistic": dict(_PRE),
    "linear": dict(_PRE),
    "logistic_l1": {**_PRE, **_L1},
    "lasso": {**_PRE, **_L1},
    "random_forest": {**_PRE, "n_trees": [20, 50, 100], "max_depth": [1, 2, 4, 6, 8, 10, 12]},
    "gradient_boosting": {**_PRE, "n_trees": [20, 50, 100], "min_data_in_leaf": [5, 10],
                          "num_leaves": [5, 10, 20], "learning_rate": [0.05, 0.075]},
}

# desk-scale subsets of the grids above (every value is drawn from them)
COMPACT_GRIDS = {
    "logistic": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                 "winsor_limit": [0.0, 0.05]},
    "linear": {"missing_threshold": [0.8], "variance_threshold": [0.01],
               "winsor_limit": [0.0, 0.05]},
    "logistic_l1": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                    "winsor_limit": [0.01], "alpha": [0.01, 0.1]},
    "lasso": {"missing_threshold": [0.8], "variance_threshold": [0.01],
              "winsor_limit": [0.01], "alpha": [0.01, 0.1]},
    "random_forest": {"missing_threshold": [0.8], "variance_threshold": [0.01],
                      "winsor_limit": [0.0], "n_trees": [50], "max_depth": [4, 8]},
    "gradient_boosting": {"missing_threshold": [1.0], "variance_threshold": [0.0],
                          "winsor_limit": [0.0], "n_trees": [50], "min_data_in_leaf": [10],
                          "num_leaves": [5, 10], "learning_rate": [0.075]},
}


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    family: str
    task: str = "classification"
    grid: dict = field(default=None)
    override: bool = False  # allow grid values outside the published sets

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise GridError(f"unknown model family {self.family!r}")
        if self.task not in TASKS[self.family]:
            raise GridError(f"family {self.family!r} does not support task {self.task!r}")
        grid = self.grid if self.grid is not None else PUBLISHED_GRIDS[self.family]
        ref = PUBLISHED_GRIDS[self.family]
        for k, vals in grid.items():
            if k not in ref:
                raise GridError(f"{self.family}: unknown hyperparameter {k!r}")
            if not vals:
                raise GridError(f"{self.family}: empty value list for {k!r}")
            if not self.override and any(v not in ref[k] for v in vals):
                raise GridError(f"{self.family}: {k} values {vals} not all in {ref[k]}")
        full = {k: list(grid[k]) if k in grid else list(ref[k]) for k in ref}
        object.__setattr__(self, "grid", full)

    @classmethod
    def compact(cls, family, task="classification"):
        return cls(family, task, COMPACT_GRIDS[family])

    def points(self) -> list[dict]:
        """Grid points in a fixed order (declaration order, last key fastest)."""
        keys = list(self.grid)
        return [dict(zip(keys, vals)) for vals in itertools.product(*(self.grid[k] for k in keys))]

    def to_dict(self):
        return {"family": self.family, "task": self.task, "grid": self.grid,
                "override": self.override}


def split_point(family: str, point: dict) -> tuple[PreprocessRecipe, dict]:
    pre = {k: point[k] for k in PREPROCESS_KEYS if k in point}
    rest = {k: v for k, v in point.items() if k not in PREPROCESS_KEYS}
    return PreprocessRecipe(**pre, impute_standardize=family != "gradient_boosting"), rest


@dataclass
class TrainedModel:
    family: str
    task: str
    recipe: FittedRecipe
    params: dict
    hyperparameters: dict
    fold_id: int | None = None
    feature_names: list = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        """Probability of the positive class (classification) or the fitted value."""
        Z = self.recipe.transform(X)
        if self.family in ("logistic", "logistic_l1", "linear", "lasso"):
            eta = linear.linear_predictor(self.params, Z)
            return linear.sigmoid(eta) if self.task == "classification" else eta
        if self.family == "random_forest":
            return trees.forest_predict(self.params, Z)
        raw = trees.gbm_raw(self.params, Z)
        return linear.sigmoid(raw) if self.task == "classification" else raw

    def importances(self) -> dict:
        """Raw importance per kept feature: |coefficient| or total split gain."""
        names = self.recipe.names
        if self.family in ("logistic", "logistic_l1", "linear", "lasso"):
            imp = np.abs(np.asarray(self.params["coef"]))
        else:
            imp = trees.impurity_importance(self.params["trees"], len(names))
        return dict(zip(names, imp.tolist()))

    def top_features(self, k=5) -> list:
        imp = self.importances()
        return sorted(imp, key=lambda n: (-imp[n], n))[:k]

    # ---------------------------------------------------------------- io
    def to_json(self) -> str:
        params = {}
        for k, v in self.params.items():
            if k == "trees":
                params[k] = [t.to_dict() for t in v]
            elif isinstance(v, np.ndarray):
                params[k] = v.tolist()
            else:
                params[k] = v
        return json.dumps({
            "format": FORMAT_VERSION, "family": self.family, "task": self.task,
            "recipe": self.recipe.to_dict(), "params": params,
            "hyperparameters": self.hyperparameters, "fold_id": self.fold_id,
            "feature_names": self.feature_names,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        d = json.loads(text)
        if d.get("format") != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {d.get('format')!r}")
        params = dict(d["params"])
        if "trees" in params:
            params["trees"] = [trees.Tree.from_dict(t) for t in params["trees"]]
        if "coef" in params:
            params["coef"] = np.asarray(params["coef"], dtype=float)
        return cls(d["family"], d["task"], FittedRecipe.from_dict(d["recipe"]), params,
                   d["hyperparameters"], d["fold_id"], d["feature_names"])


def fit(spec: ModelSpec, recipe: PreprocessRecipe, X, y, weights=None, hyperparameters=None,
        seed: int = 0, names=None, fold_id=None) -> TrainedModel:
    """Fit preprocessing on (X, y) then the model family's learner."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
    hp = dict(hyperparameters or {})
    names = list(names) if names is not None else [f"x{j}" for j in range(X.shape[1])]
    fitted = recipe.fit(X, names)
    Z = fitted.transform(X)
    fam, task = spec.family, spec.task
    if fam == "logistic":
        params = linear.fit_logistic(Z, y, weights)
    elif fam == "logistic_l1":
        params = linear.fit_logistic_l1(Z, y, weights, alpha=hp.get("alpha", 1.0))
    elif fam == "linear":
        params = linear.fit_linear(Z, y, weights)
    elif fam == "lasso":
        params = linear.fit_lasso(Z, y, weights, alpha=hp.get("alpha", 1.0))
    elif fam == "random_forest":
        params = trees.fit_forest(Z, y, weights, task, n_trees=hp.get("n_trees", 100),
                                  max_depth=hp.get("max_depth", 8), seed=seed)
    else:
        params = trees.fit_gbm(Z, y, weights, task, n_trees=hp.get("n_trees", 100),
                               learning_rate=hp.get("learning_rate", 0.05),
                               num_leaves=hp.get("num_leaves", 10),
                               min_data_in_leaf=hp.get("min_data_in_leaf", 10))
    full_hp = {**{k: getattr(recipe, k) for k in PREPROCESS_KEYS}, **hp}
    return TrainedModel(fam, task, fitted, params, full_hp, fold_id, names)


def fit_point(spec: ModelSpec, point: dict, X, y, weights=None, seed=0, names=None,
              fold_id=None) -> TrainedModel:
    recipe, hp = split_point(spec.family, point)
    return fit(spec, recipe, X, y, weights, hp, seed, names, fold_id)
